//! Built-in instances used by the tests, the acceptance suite, and the CLI.

use nalgebra::{dvector, DMatrix, DVector};

use crate::flow::FlowProblem;
use crate::sets::{Point, SetOracle};

fn line2(angle: f64) -> SetOracle {
    SetOracle::line(dvector![0.0, 0.0], dvector![angle.cos(), angle.sin()]).unwrap()
}

fn span(m: usize, dirs: &[Vec<f64>]) -> SetOracle {
    let flat: Vec<f64> = dirs.iter().flatten().copied().collect();
    SetOracle::affine(DVector::zeros(m), DMatrix::from_column_slice(m, dirs.len(), &flat)).unwrap()
}

/// `A` = x-axis, `B` = y-axis.
pub fn orthogonal_lines() -> FlowProblem {
    let b = SetOracle::line(dvector![0.0, 0.0], dvector![0.0, 1.0]).unwrap();
    FlowProblem::new(line2(0.0), b).unwrap()
}

/// `A` = x-axis, `B` = line through the origin at angle `theta` (radians).
pub fn lines_at_angle(theta: f64) -> FlowProblem {
    FlowProblem::new(line2(0.0), line2(theta)).unwrap()
}

/// Infeasible pair `A: y = 0`, `B: y = 1`.
pub fn parallel_lines() -> FlowProblem {
    let b = SetOracle::line(dvector![0.0, 1.0], dvector![1.0, 0.0]).unwrap();
    FlowProblem::new(line2(0.0), b).unwrap()
}

/// `A = {0, 2}`, `B = {0, 3}` on the line.
pub fn trap_1d() -> FlowProblem {
    let a = SetOracle::finite_points(vec![dvector![0.0], dvector![2.0]]).unwrap();
    let b = SetOracle::finite_points(vec![dvector![0.0], dvector![3.0]]).unwrap();
    FlowProblem::new(a, b).unwrap()
}

/// `A = {(0,0), (4,0)}`, `B = {(0,0), (3,3)}`: a single convergent interface
/// on `x1 = 2` (for `x2 < -5`) with sliding velocity `(0, 3)`.
pub fn planar_sliding() -> FlowProblem {
    let a = SetOracle::finite_points(vec![dvector![0.0, 0.0], dvector![4.0, 0.0]]).unwrap();
    let b = SetOracle::finite_points(vec![dvector![0.0, 0.0], dvector![3.0, 3.0]]).unwrap();
    FlowProblem::new(a, b).unwrap()
}

/// Start point, interface normal, and a point on the interface for [`planar_sliding`].
pub fn planar_sliding_geometry() -> (Point, Point, Point) {
    (dvector![1.0, -9.0], dvector![1.0, 0.0], dvector![2.0, 0.0])
}

/// Two 2-planes through the origin of R⁴ meeting in the `e1` axis at angle `theta`.
pub fn planes_at_angle_r4(theta: f64) -> FlowProblem {
    let a = span(4, &[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]]);
    let b = span(4, &[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, theta.cos(), theta.sin(), 0.0]]);
    FlowProblem::new(a, b).unwrap()
}

/// Two planes in R³ sharing the `e3` axis, at angle `theta` otherwise.
pub fn planes_with_common_axis(theta: f64) -> FlowProblem {
    let a = span(3, &[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]);
    let b = span(3, &[vec![theta.cos(), theta.sin(), 0.0], vec![0.0, 0.0, 1.0]]);
    FlowProblem::new(a, b).unwrap()
}

/// Unit circle and the line `y = 0.6`, meeting at `(±0.8, 0.6)`.
pub fn circle_and_line() -> FlowProblem {
    let a = SetOracle::sphere(dvector![0.0, 0.0], 1.0).unwrap();
    let b = SetOracle::line(dvector![0.0, 0.6], dvector![1.0, 0.0]).unwrap();
    FlowProblem::new(a, b).unwrap()
}

/// Look up a named instance; `theta` is in degrees where it applies.
pub fn by_name(name: &str, theta_deg: f64) -> Option<FlowProblem> {
    let theta = theta_deg.to_radians();
    Some(match name {
        "orthogonal-lines" => orthogonal_lines(),
        "lines" => lines_at_angle(theta),
        "parallel-lines" => parallel_lines(),
        "trap-1d" => trap_1d(),
        "planar-sliding" => planar_sliding(),
        "planes-r4" => planes_at_angle_r4(theta),
        "common-axis" => planes_with_common_axis(theta),
        "circle-line" => circle_and_line(),
        _ => return None,
    })
}

pub const NAMES: &[&str] = &[
    "orthogonal-lines",
    "lines",
    "parallel-lines",
    "trap-1d",
    "planar-sliding",
    "planes-r4",
    "common-axis",
    "circle-line",
];
