use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Point, ProductBlock, SetOracle};
use crate::error::{Error, Result};

/// JSON description of a constraint set, tagged by `kind`.
///
/// ```json
/// {"kind": "affine", "base": [0, 0], "basis": [[1, 0]]}
/// {"kind": "box", "lower": [0, null], "upper": [null, 1]}
/// ```
///
/// `basis` lists the tangent directions (one inner array per direction).
/// A `null` box bound means unbounded on that side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetSpec {
    Affine { base: Vec<f64>, basis: Vec<Vec<f64>> },
    Sphere { center: Vec<f64>, radius: f64 },
    Box { lower: Vec<Option<f64>>, upper: Vec<Option<f64>> },
    Finite { points: Vec<Vec<f64>> },
    Product { dim: usize, blocks: Vec<ProductBlockSpec> },
    Bilinear { target: f64, rank: usize, #[serde(default)] nonneg: bool },
    Consensus { copies: usize, width: usize, #[serde(default)] nonneg: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductBlockSpec {
    pub indices: Vec<usize>,
    pub set: SetSpec,
}

impl SetSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self) -> Result<SetOracle> {
        match self {
            SetSpec::Affine { base, basis } => {
                let m = base.len();
                for d in basis {
                    if d.len() != m {
                        return Err(Error::DimensionMismatch { expected: m, got: d.len() });
                    }
                }
                let flat: Vec<f64> = basis.iter().flatten().copied().collect();
                SetOracle::affine(Point::from_vec(base.clone()), DMatrix::from_column_slice(m, basis.len(), &flat))
            }
            SetSpec::Sphere { center, radius } => SetOracle::sphere(Point::from_vec(center.clone()), *radius),
            SetSpec::Box { lower, upper } => SetOracle::boxed(
                lower.iter().map(|l| l.unwrap_or(f64::NEG_INFINITY)).collect(),
                upper.iter().map(|u| u.unwrap_or(f64::INFINITY)).collect(),
            ),
            SetSpec::Finite { points } => {
                SetOracle::finite_points(points.iter().map(|p| Point::from_vec(p.clone())).collect())
            }
            SetSpec::Product { dim, blocks } => {
                let built = blocks
                    .iter()
                    .map(|b| Ok(ProductBlock { indices: b.indices.clone(), set: b.set.build()? }))
                    .collect::<Result<Vec<_>>>()?;
                SetOracle::product(*dim, built)
            }
            SetSpec::Bilinear { target, rank, nonneg } => SetOracle::bilinear(*target, *rank, *nonneg),
            SetSpec::Consensus { copies, width, nonneg } => SetOracle::consensus(*copies, *width, *nonneg),
        }
    }
}

impl From<&SetOracle> for SetSpec {
    fn from(set: &SetOracle) -> Self {
        let bound = |v: f64| v.is_finite().then_some(v);
        match set {
            SetOracle::Affine(a) => SetSpec::Affine {
                base: a.base().as_slice().to_vec(),
                basis: a.basis().column_iter().map(|c| c.iter().copied().collect()).collect(),
            },
            SetOracle::Sphere { center, radius } => {
                SetSpec::Sphere { center: center.as_slice().to_vec(), radius: *radius }
            }
            SetOracle::Box { lower, upper } => SetSpec::Box {
                lower: lower.iter().map(|&v| bound(v)).collect(),
                upper: upper.iter().map(|&v| bound(v)).collect(),
            },
            SetOracle::FinitePoints(p) => SetSpec::Finite { points: p.iter().map(|x| x.as_slice().to_vec()).collect() },
            SetOracle::Product { dim, blocks } => SetSpec::Product {
                dim: *dim,
                blocks: blocks
                    .iter()
                    .map(|b| ProductBlockSpec { indices: b.indices.clone(), set: SetSpec::from(&b.set) })
                    .collect(),
            },
            SetOracle::Bilinear { target, rank, nonneg } => {
                SetSpec::Bilinear { target: *target, rank: *rank, nonneg: *nonneg }
            }
            SetOracle::Consensus { copies, width, nonneg } => {
                SetSpec::Consensus { copies: *copies, width: *width, nonneg: *nonneg }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_round_trip() {
        let s = SetSpec::from_json(r#"{"kind":"box","lower":[0,null],"upper":[null,1]}"#).unwrap();
        let oracle = s.build().unwrap();
        assert_eq!(SetSpec::from(&oracle), s);

        let line = SetSpec::from_json(r#"{"kind":"affine","base":[0,0],"basis":[[0,1]]}"#).unwrap();
        let p = line.build().unwrap().project(&Point::from_vec(vec![3.0, 4.0])).unwrap();
        assert_eq!(p.as_slice(), &[0.0, 4.0]);
    }

    #[test]
    fn rejects_unknown_kind() {
        assert!(SetSpec::from_json(r#"{"kind":"torus"}"#).is_err());
    }
}
