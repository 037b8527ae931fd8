//! Temporary diagnostics (deleted before release).

use oodkit::detectors::fit_ihf;
use oodkit::harness::{phantom, PhantomConfig};
use oodkit::metrics::fpr_at_tpr;
use oodkit::rng::case_seed;
use oodkit::synth::{corrupt, CorruptionKind, CorruptionSpec};
use oodkit::volgrid::{preprocess, ClipMode, PreprocessConfig, Volume};

fn eval_variant(cfg: &PhantomConfig, clip: ClipMode, v: Option<f64>, label: &str) {
    let pp = PreprocessConfig {
        target_spacing: cfg.spacing,
        clip,
    };
    let train: Vec<Volume<f32>> = (0..40)
        .map(|i| phantom(cfg, case_seed(7, &format!("train_{i:03}"))))
        .collect();
    let test: Vec<Volume<f32>> = (0..20)
        .map(|i| phantom(cfg, case_seed(8, &format!("test_{i:03}"))))
        .collect();
    let det = fit_ihf::<f32, f64>(&train, &pp, 150, v, 1e-9).unwrap();

    let mah_id: Vec<f64> = test.iter().map(|t| det.score_mahalanobis(t).unwrap()).collect();
    let nn_id: Vec<f64> = test.iter().map(|t| det.score_nn(t).unwrap()).collect();

    print!("{label} (k={:2}):", det.feature_dim());
    for kind in [
        CorruptionKind::KspaceSpikes,
        CorruptionKind::Anisotropy,
        CorruptionKind::Ghosting,
    ] {
        print!("  {} ", kind.name());
        for sev in 1..=5u8 {
            let mut mah_ood = Vec::new();
            let mut nn_ood = Vec::new();
            for (i, t) in test.iter().enumerate() {
                let clean = preprocess(t, &pp).unwrap();
                let spec =
                    CorruptionSpec::new(kind, sev, case_seed(7, &format!("test_{i:03}"))).unwrap();
                let bad = corrupt(&clean, &spec).unwrap();
                mah_ood.push(det.score_mahalanobis(&bad).unwrap());
                nn_ood.push(det.score_nn(&bad).unwrap());
            }
            let (fpr_m, _) = fpr_at_tpr(&mah_id, &mah_ood, 0.95).unwrap();
            let (fpr_n, _) = fpr_at_tpr(&nn_id, &nn_ood, 0.95).unwrap();
            print!("s{sev}:{fpr_m:.2}/{fpr_n:.2} ");
        }
    }
    println!();
}

#[test]
#[ignore]
fn sweep_phantom_variants() {
    let percentile = ClipMode::PercentileWindow { p_lo: 1.0, p_hi: 99.0 };
    let fixed = ClipMode::FixedWindow { lo: 0.0, hi: 1.0 };
    let cfg = PhantomConfig::default();
    for (clip, cname) in [(percentile, "pct"), (fixed, "fix")] {
        for v in [Some(0.9999), Some(0.99)] {
            eval_variant(&cfg, clip, v, &format!("bimodal {cname} v{:?}", v.unwrap()));
        }
    }
}
