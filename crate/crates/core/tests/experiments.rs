use mia_audit::dataspace::{ClassDropSpec, SynthConfig};
use mia_audit::evaluation::{run_class_dropout, run_sample_scarcity, AttackSpec, DataSource, ExperimentConfig};
use mia_audit::netcore::{Architecture, OptConfig};

fn small(attacks: Vec<AttackSpec>) -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Synthetic(SynthConfig {
            class_count: 4,
            feature_dim: 6,
            per_class_count: 100,
            ..SynthConfig::default()
        }),
        target_arch: Architecture { hidden: vec![12] },
        target_opt: OptConfig {
            epochs: 20,
            ..OptConfig::default()
        },
        attacks,
        seeds: vec![0, 1],
        ..ExperimentConfig::default()
    }
}

fn cheap_attacks() -> Vec<AttackSpec> {
    let mut quantile = AttackSpec::default_quantile();
    if let AttackSpec::Quantile { arch, opt, .. } = &mut quantile {
        *arch = mia_audit::attacks::QuantileArch::Network(Architecture { hidden: vec![8] });
        opt.epochs = 15;
    }
    vec![AttackSpec::default_marginal(), quantile]
}

#[test]
fn empty_drop_set_has_no_unseen_group() {
    let out = run_class_dropout(&small(cheap_attacks()), &[ClassDropSpec::none()]).unwrap();
    assert_eq!(out.report.cells.len(), 2);
    for cell in &out.report.cells {
        assert!(cell.dropped_classes.is_empty());
        for groups in cell.attacks.values() {
            assert!(!groups.contains_key("unseen"));
            let all = &groups["all"];
            assert!(all.n_member > 0 && all.n_nonmember > 0);
            assert!(all.tpr.values().all(|t| (0.0..=1.0).contains(t)));
        }
    }
}

#[test]
fn oversized_cap_matches_the_full_public_set() {
    let cfg = small(cheap_attacks());
    let drop = ClassDropSpec::new([1], 4).unwrap();
    let out = run_sample_scarcity(&cfg, &[None, Some(100_000)], &drop).unwrap();
    let full: Vec<_> = out.report.cells_for("drop1_kfull").collect();
    let capped: Vec<_> = out.report.cells_for("drop1_k100000").collect();
    assert_eq!(full.len(), 2);
    for (a, b) in full.iter().zip(&capped) {
        assert_eq!(a.public_rows, b.public_rows);
        assert_eq!(a.attacks, b.attacks);
    }
}

#[test]
fn single_sample_per_class_still_reports_finite_metrics() {
    let cfg = small(cheap_attacks());
    let out = run_sample_scarcity(&cfg, &[Some(1)], &ClassDropSpec::none()).unwrap();
    for cell in &out.report.cells {
        assert_eq!(cell.public_rows, 4);
        for groups in cell.attacks.values() {
            for m in groups.values() {
                assert!(m.tpr.values().all(|t| t.is_finite() && (0.0..=1.0).contains(t)));
            }
        }
    }
}

#[test]
fn zero_cap_is_rejected() {
    assert!(run_sample_scarcity(&small(cheap_attacks()), &[Some(0)], &ClassDropSpec::none()).is_err());
}
