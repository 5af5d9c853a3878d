use spinhall::edge::{
    bulk_gap, bump_g, charge_edge_current_per_spin, edge_current, profile_decay_rate, Edge, RibbonParams,
};
use spinhall::model::{build, Geometry, ModelSpec};
use spinhall::realspace::{fhs_spin_chern, spin_chern_disordered};
use spinhall::spectral::{fermi_projection, projection_decay};
use spinhall::transfer::spin_chern_transfer;

const WINDOW: (f64, f64) = (-0.5, 0.5);

fn lower_current(spec: &ModelSpec, params: &RibbonParams) -> f64 {
    let gap = bulk_gap(spec, 1.0, WINDOW, &params.seeds).unwrap().gap_interval;
    let g = bump_g(gap, 0.5, 0.5).unwrap();
    edge_current(spec, 1.0, params, &g, gap, Edge::Lower).unwrap().j_e
}

#[test]
fn edge_current_sign_follows_spin_chern_numbers() {
    for so in [0.2, -0.2] {
        let spec = ModelSpec::kane_mele(so);
        let weighted: f64 = spin_chern_transfer(&spec, 0.0, 128)
            .unwrap()
            .values()
            .map(|b| b.level * b.winding.ch as f64)
            .sum();
        let j = lower_current(&spec, &RibbonParams::clean(32, 128));
        assert_eq!(weighted.abs(), 1.0);
        assert!((j - weighted).abs() < 0.02, "lambda_SO {so}: j {j} vs sum l SCh_l {weighted}");
    }
}

#[test]
fn cutoff_placement_does_not_matter() {
    let spec = ModelSpec::kane_mele(0.2);
    let mut params = RibbonParams::clean(48, 128);
    let centre = lower_current(&spec, &params);
    for c in [20, 28] {
        params.cutoff_row = Some(c);
        let j = lower_current(&spec, &params);
        assert!((j - centre).abs() < 1e-4, "cutoff {c}: {j} vs {centre}");
    }
}

#[test]
fn per_spin_charge_currents_equal_spin_chern_numbers() {
    let spec = ModelSpec::kane_mele(0.2);
    let gap = bulk_gap(&spec, 1.0, WINDOW, &[]).unwrap().gap_interval;
    let g = bump_g(gap, 0.5, 0.5).unwrap();
    let params = RibbonParams::clean(48, 512);
    for (l, sch) in [(0.5, 1.0), (-0.5, -1.0)] {
        let j = charge_edge_current_per_spin(&spec, l, &g, gap, &params).unwrap();
        assert!((j - sch).abs() < 0.02, "l {l}: {j}");
    }
}

#[test]
fn trivial_insulator_has_no_edge_current() {
    // staggered potential beyond 3 sqrt(3) lambda_SO: trivial phase
    let spec = ModelSpec::kane_mele(0.2).with_staggered(2.0);
    let blocks = spin_chern_transfer(&spec, 0.0, 128).unwrap();
    assert!(blocks.values().all(|b| b.winding.ch == 0));
    let gap = bulk_gap(&spec, 1.0, WINDOW, &[]).unwrap().gap_interval;
    let g = bump_g(gap, 0.5, 0.5).unwrap();
    let params = RibbonParams::clean(32, 128);
    for l in [0.5, -0.5] {
        let j = charge_edge_current_per_spin(&spec, l, &g, gap, &params).unwrap();
        assert!(j.abs() < 0.02, "l {l}: {j}");
    }
    assert!(lower_current(&spec, &params).abs() < 0.02);
}

#[test]
fn edge_weight_decays_into_the_bulk() {
    let spec = ModelSpec::kane_mele(0.2);
    let gap = bulk_gap(&spec, 1.0, WINDOW, &[]).unwrap().gap_interval;
    let g = bump_g(gap, 0.5, 0.5).unwrap();
    let r = edge_current(&spec, 1.0, &RibbonParams::clean(48, 64), &g, gap, Edge::Lower).unwrap();
    let rate = profile_decay_rate(&r.profile).unwrap();
    assert!(rate > 0.5, "{rate}");
    assert!(r.leakage < 1e-12);
}

#[test]
fn narrow_ribbon_is_rejected() {
    let spec = ModelSpec::kane_mele(0.2);
    let gap = bulk_gap(&spec, 1.0, WINDOW, &[]).unwrap().gap_interval;
    let g = bump_g(gap, 0.5, 0.5).unwrap();
    assert!(edge_current(&spec, 1.0, &RibbonParams::clean(16, 16), &g, gap, Edge::Lower).is_err());
}

#[test]
fn leakage_guard_names_the_remedy() {
    // a cutoff two rows from the edge still carries edge weight
    let spec = ModelSpec::kane_mele(0.2);
    let gap = bulk_gap(&spec, 1.0, WINDOW, &[]).unwrap().gap_interval;
    let g = bump_g(gap, 0.5, 0.5).unwrap();
    let mut params = RibbonParams::clean(32, 64);
    params.cutoff_row = Some(2);
    let err = edge_current(&spec, 1.0, &params, &g, gap, Edge::Lower).unwrap_err();
    assert_eq!(err.guard(), Some("increase N2"));
}

#[test]
fn disordered_ribbon_stays_quantized() {
    let spec = ModelSpec::kane_mele(0.2).with_disorder(0.06, 0);
    let params = RibbonParams { n2: 32, n_k: 8, supercell: 4, cutoff_row: None, seeds: vec![1, 2] };
    let gap = bulk_gap(&spec, 1.0, WINDOW, &params.seeds).unwrap().gap_interval;
    let g = bump_g(gap, 0.5, 0.5).unwrap();
    let r = edge_current(&spec, 1.0, &params, &g, gap, Edge::Lower).unwrap();
    assert!((r.j_lower - 1.0).abs() < 0.02, "{}", r.j_lower);
    assert!((r.j_upper + 1.0).abs() < 0.02, "{}", r.j_upper);
}

#[test]
fn fermi_projection_decays_on_large_torus() {
    let spec = ModelSpec::kane_mele(0.2);
    let h = build(&spec, &Geometry::Torus { n1: 24, n2: 24 }).unwrap();
    let p = fermi_projection(&h.matrix, 0.0).unwrap();
    let (eta, resid) = projection_decay(&p.projector(), &h).unwrap();
    assert!(eta > 0.5 && eta.is_finite(), "eta {eta}");
    assert!(resid < 1.0, "fit residual {resid}");
}

#[test]
fn marker_agrees_with_oracle_for_weak_rashba_at_pinched_endpoint() {
    // at lambda = 0 the homotopy removes the Rashba term's spin-flip part
    let spec = ModelSpec::kane_mele(0.2).with_rashba(0.05);
    let (ok, failed) = spin_chern_disordered(&spec, &[0], 0.0, 16, 0.25).unwrap();
    assert!(failed.is_empty());
    let conserving = ModelSpec::kane_mele(0.2);
    for (key, l) in [("+1/2", 0.5), ("-1/2", -0.5)] {
        assert_eq!(ok[0].levels[key].rounded, fhs_spin_chern(&conserving, l, 0.0, 32).unwrap());
    }
}
