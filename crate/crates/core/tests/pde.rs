use std::f64::consts::PI;

use dduq_core::pde::{
    l2_error, BoundarySpec, Diffusion, InterfaceKind, LocalOperator, Mesh, Rect, ScalarField, Side, SideData,
};
use proptest::prelude::*;

fn unit_mesh(h: f64) -> Mesh {
    Mesh::new(Rect::new(0.0, 1.0, 0.0, 1.0), h).unwrap()
}

fn manufactured_error(h: f64) -> f64 {
    let mesh = unit_mesh(h);
    let a = vec![1.0; mesh.num_nodes()];
    let f = ScalarField::Function(|x, y| 2.0 * PI * PI * (PI * x).sin() * (PI * y).sin());
    let op = LocalOperator::assemble(&mesh, Diffusion::Nodal(&a), f, BoundarySpec::all_exterior()).unwrap();
    let u = op.solve(&[]).unwrap();
    l2_error(&mesh, &u, |x, y| (PI * x).sin() * (PI * y).sin())
}

#[test]
fn manufactured_solution_converges_at_second_order() {
    let e: Vec<f64> = [0.125, 0.0625, 0.03125].into_iter().map(manufactured_error).collect();
    for w in e.windows(2) {
        let rate = (w[0] / w[1]).log2();
        assert!((1.8..=2.2).contains(&rate), "rate {rate} from {e:?}");
    }
}

fn op_with(side: Side, kind: InterfaceKind, a: &[f64], h: f64) -> (Mesh, LocalOperator) {
    let mesh = unit_mesh(h);
    let bc = BoundarySpec::all_exterior().with_interface(side, kind);
    let op = LocalOperator::assemble(&mesh, Diffusion::Nodal(a), ScalarField::Constant(0.0), bc).unwrap();
    (mesh, op)
}

fn smooth_coefficient(mesh: &Mesh, p: (f64, f64)) -> Vec<f64> {
    mesh.nodes().map(|[x, y]| (p.0 * (3.0 * x).sin() + p.1 * (2.0 * y).cos()).exp()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn discrete_maximum_principle(
        data in prop::collection::vec(-5.0f64..5.0, 7),
        p in (-0.5f64..0.5, -0.5f64..0.5),
    ) {
        let a = smooth_coefficient(&unit_mesh(0.125), p);
        let (_, op) = op_with(Side::Right, InterfaceKind::Dirichlet, &a, 0.125);
        let u = op.solve(&[SideData { side: Side::Right, values: &data }]).unwrap();
        let hi = data.iter().copied().fold(0.0, f64::max);
        let lo = data.iter().copied().fold(0.0, f64::min);
        prop_assert!(u.iter().all(|&v| v <= hi + 1e-12 && v >= lo - 1e-12));
    }

    #[test]
    fn neumann_response_is_symmetric_and_positive(
        q1 in prop::collection::vec(-3.0f64..3.0, 7),
        q2 in prop::collection::vec(-3.0f64..3.0, 7),
        p in (-1.0f64..1.0, -1.0f64..1.0),
    ) {
        let a = smooth_coefficient(&unit_mesh(0.125), p);
        let (_, op) = op_with(Side::Left, InterfaceKind::Neumann, &a, 0.125);
        let u1 = op.solve(&[SideData { side: Side::Left, values: &q1 }]).unwrap();
        let u2 = op.solve(&[SideData { side: Side::Left, values: &q2 }]).unwrap();
        let dot = |t: Vec<f64>, q: &[f64]| t.iter().zip(q).map(|(a, b)| a * b).sum::<f64>();
        let s12 = dot(op.trace(&u1, Side::Left), &q2);
        let s21 = dot(op.trace(&u2, Side::Left), &q1);
        prop_assert!((s12 - s21).abs() <= 1e-10 * (1.0 + s12.abs()));
        if q1.iter().any(|v| v.abs() > 1e-6) {
            prop_assert!(op.energy(&u1) > 0.0);
        }
    }
}

#[test]
fn energy_equals_work_of_the_neumann_load() {
    let mesh = unit_mesh(0.0625);
    let a = smooth_coefficient(&mesh, (0.3, -0.2));
    let (mesh, op) = op_with(Side::Bottom, InterfaceKind::Neumann, &a, mesh.h);
    let q: Vec<f64> = (0..15).map(|k| (k as f64 * 0.4).sin()).collect();
    let u = op.solve(&[SideData { side: Side::Bottom, values: &q }]).unwrap();
    // uᵀKu = −h Σ q u on the side with homogeneous data elsewhere.
    let work: f64 = -mesh.h * op.trace(&u, Side::Bottom).iter().zip(&q).map(|(u, q)| u * q).sum::<f64>();
    assert!((op.energy(&u) - work).abs() < 1e-10 * work.abs().max(1.0));
}
