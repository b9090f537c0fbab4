use kaclab_core::experiments::*;
use kaclab_core::Error;

fn small(kind: ExperimentKind) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(kind);
    c.n = 32;
    c.t_final = 0.01;
    c.snapshots = 10;
    c.replicates = 3;
    c
}

#[test]
fn config_json_round_trip() {
    for kind in [
        ExperimentKind::ConvergeTwoStep,
        ExperimentKind::EntropyReport,
        ExperimentKind::RemainderScaling,
        ExperimentKind::LdpRegime,
        ExperimentKind::GammaConverge,
        ExperimentKind::NoiseChecks,
        ExperimentKind::Simulate,
    ] {
        let c = ExperimentConfig::new(kind);
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }
}

#[test]
fn omitted_keys_take_the_defaults_of_the_kind() {
    let c = ExperimentConfig::from_json(r#"{"kind":"gamma_converge","seed":5}"#).unwrap();
    let mut expect = ExperimentConfig::new(ExperimentKind::GammaConverge);
    expect.seed = 5;
    assert_eq!(c, expect);
    let c = ExperimentConfig::from_json(r#"{"kind":"entropy_report","dt":null}"#).unwrap();
    assert_eq!(c, ExperimentConfig::new(ExperimentKind::EntropyReport));
    assert!(ExperimentConfig::from_json("[1]").is_err());
    assert!(ExperimentConfig::from_json(r#"{"seed":1}"#).is_err());
}

#[test]
fn unknown_keys_and_bad_values_are_config_errors() {
    let e = ExperimentConfig::from_json(r#"{"kind":"noise_checks","gamas":[0.5]}"#).unwrap_err();
    assert!(matches!(e, Error::Config(_)), "{e}");

    let mut c = small(ExperimentKind::ConvergeTwoStep);
    c.gammas.clear();
    assert!(matches!(c.validate(), Err(Error::Config(_))));

    let mut c = small(ExperimentKind::RemainderScaling);
    c.deltas = vec![0.1, 0.05];
    assert!(matches!(c.validate(), Err(Error::Config(_))));
}

#[test]
fn hash_tracks_parameters_not_output_location() {
    let a = small(ExperimentKind::EntropyReport);
    let mut b = a.clone();
    b.output_dir = Some("elsewhere".into());
    assert_eq!(a.hash(), b.hash());
    b.seed = 1;
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn reports_are_byte_identical_across_reruns_and_workers() {
    for kind in [
        ExperimentKind::ConvergeTwoStep,
        ExperimentKind::EntropyReport,
        ExperimentKind::LdpRegime,
    ] {
        let mut c = small(kind);
        c.gammas = vec![0.5, 0.25];
        c.deltas = vec![0.2];
        c.levels = 2;
        let one = run_experiment(&c, 1).unwrap().table.to_csv_string();
        let again = run_experiment(&c, 1).unwrap().table.to_csv_string();
        let two = run_experiment(&c, 2).unwrap().table.to_csv_string();
        assert_eq!(one, again, "{}", kind.name());
        assert_eq!(one, two, "{}", kind.name());
        c.seed = 99;
        let other = run_experiment(&c, 1).unwrap().table.to_csv_string();
        assert_ne!(one, other, "{} ignores the seed", kind.name());
    }
}

#[test]
fn degenerate_converge_config_gives_one_row() {
    let mut c = small(ExperimentKind::ConvergeTwoStep);
    c.gammas = vec![0.25];
    c.deltas = vec![0.1];
    c.replicates = 1;
    let t = run_experiment(&c, 1).unwrap().table;
    assert_eq!(t.rows.len(), 1);
    // a single replicate has zero standard error
    assert_eq!(t.column("std_err_kac_to_mollified").unwrap(), vec![Some(0.0)]);
    let csv = t.to_csv_string();
    assert!(csv.contains("# config_hash: "));
    assert!(csv.contains(REINTERPRETATION_NOTE));
}

#[test]
fn regime_quantity_decreases_along_default_schedule() {
    let s = default_schedule(4);
    let q: Vec<f64> = s.iter().map(|e| regime_quantity(e).unwrap()).collect();
    for w in q.windows(2) {
        assert!(w[1] < w[0], "{q:?}");
    }
}

#[test]
fn noise_free_ldp_run_matches_its_deterministic_twin() {
    let mut c = small(ExperimentKind::LdpRegime);
    c.schedule = Some(vec![ScheduleEntry {
        epsilon: 0.0,
        gamma: 0.25,
        delta: 0.1,
        n: 64,
    }]);
    c.replicates = 2;
    let t = run_experiment(&c, 1).unwrap().table;
    assert_eq!(t.column("mean_dist_noise_free").unwrap(), vec![Some(0.0)]);
    assert!(t.column("mean_dist_skeleton").unwrap()[0].unwrap() > 0.0);
}

#[test]
fn noise_free_dissipation_is_nonnegative() {
    let mut c = small(ExperimentKind::EntropyReport);
    c.epsilons = vec![0.0];
    c.replicates = 1;
    c.gammas = vec![0.5, 0.25];
    c.deltas = vec![0.1];
    let t = run_experiment(&c, 1).unwrap().table;
    for d in t.column("dissipation").unwrap() {
        assert!(d.unwrap() >= -1e-8, "{d:?}");
    }
    for e in t.column("energy_functional").unwrap() {
        assert!(e.unwrap() > 0.0);
    }
}

#[test]
fn noise_check_table_has_flat_scaled_coefficients() {
    let t = run_experiment(&ExperimentConfig::new(ExperimentKind::NoiseChecks), 1)
        .unwrap()
        .table;
    assert_eq!(t.rows.len(), 3);
    for col in ["f2_sup", "f1_spread", "f3_spread"] {
        for v in t.column(col).unwrap() {
            assert!(v.unwrap() < 1e-10, "{col}: {v:?}");
        }
    }
    for col in ["f1_scaled", "f3_scaled"] {
        let v: Vec<f64> = t.column(col).unwrap().into_iter().map(Option::unwrap).collect();
        let (lo, hi) = v
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(l, h), x| (l.min(*x), h.max(*x)));
        assert!(hi / lo < 3.0, "{col}: {v:?}");
    }
}

#[test]
fn simulate_returns_one_trajectory_per_replicate() {
    let mut c = small(ExperimentKind::Simulate);
    c.replicates = 2;
    let r = run_experiment(&c, 1).unwrap();
    assert_eq!(r.trajectories.len(), 2);
    assert_eq!(r.table.rows.len(), 2);
    let dir = tempfile::tempdir().unwrap();
    let paths = r.write(dir.path()).unwrap();
    assert_eq!(paths.len(), 3);
    let back = kaclab_core::Trajectory::load(&paths[1]).unwrap();
    assert_eq!(back.fields(), r.trajectories[0].1.fields());
}

#[test]
fn loglog_slope_recovers_power_laws() {
    let x = [0.5, 0.25, 0.125, 0.0625];
    let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(0.7)).collect();
    assert!((loglog_slope(&x, &y).unwrap() - 0.7).abs() < 1e-12);
    assert!(loglog_slope(&x[..2], &y[..2]).is_err());
}

#[test]
fn entropy_functionals_are_uniform_in_gamma() {
    let t = run_experiment(&ExperimentConfig::new(ExperimentKind::EntropyReport), 1)
        .unwrap()
        .table;
    let gamma = t.column("gamma").unwrap();
    let delta = t.column("delta").unwrap();
    let e = t.column("energy_functional").unwrap();
    let at: Vec<f64> = (0..t.rows.len())
        .filter(|&i| delta[i] == Some(0.1))
        .map(|i| e[i].unwrap())
        .collect();
    assert_eq!(at.len(), 3);
    let ratio = at.iter().copied().fold(0.0, f64::max) / at.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(ratio < 3.0, "{at:?}");
    assert!(t.summary_value("max_gamma_ratio").unwrap() < 3.0);
    let slope = t.summary_value("delta_slope").unwrap();
    assert!(slope >= -1.3, "delta slope {slope}");
    assert!(gamma.iter().all(Option::is_some));
}

#[test]
fn controlled_distance_shrinks_along_the_schedule() {
    let mut c = ExperimentConfig::new(ExperimentKind::LdpRegime);
    c.replicates = 30;
    let t = run_experiment(&c, 1).unwrap().table;
    let d: Vec<f64> = t
        .column("mean_dist_skeleton")
        .unwrap()
        .into_iter()
        .map(Option::unwrap)
        .collect();
    for w in d.windows(2) {
        assert!(w[1] < w[0], "{d:?}");
    }
    let warn = t.column_index("regime_warning").unwrap();
    assert!(t.rows.iter().all(|r| r[warn] == Cell::Bool(false)));
}

#[test]
fn default_recovery_sequence_closes_the_rate_gap() {
    let t = run_experiment(&ExperimentConfig::new(ExperimentKind::GammaConverge), 1)
        .unwrap()
        .table;
    let gaps: Vec<f64> = t
        .column("relative_gap")
        .unwrap()
        .into_iter()
        .map(Option::unwrap)
        .collect();
    for w in gaps.windows(2) {
        assert!(w[1] < w[0], "{gaps:?}");
    }
    assert!(gaps[2] < 0.15, "{gaps:?}");
    assert!(t.summary_value("rate_ch").unwrap() > 0.0);
}
