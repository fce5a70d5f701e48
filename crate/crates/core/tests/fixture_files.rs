//! Pins the shipped example-model files to the in-crate generator and
//! proves the bundle loads, re-derives, calibrates, and replicates its own
//! benchmark.

use std::path::{Path, PathBuf};

use watercge_core::accounts::{AccountMeta, Sam, SamLayout};
use watercge_core::augment::{run_pipeline, WaterFlows, WaterRates};
use watercge_core::calibrate::calibrate;
use watercge_core::config::ModelConfig;
use watercge_core::fixture;
use watercge_core::model::system::assemble;
use watercge_core::model::WaterMobility;
use watercge_core::solve::System;
use watercge_core::tol::CALIBRATION_RESIDUAL_TOL;

const FILES: &[&str] = &[
    "model.toml",
    "accounts.csv",
    "sam.csv",
    "raw_sam.csv",
    "water_flows.csv",
    "water_rates.csv",
];

fn shipped_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/model")
}

/// Regenerates the shipped bundle in the source tree. Run after changing
/// the generator:
///
/// ```text
/// cargo test -p watercge-core --test fixture_files -- --ignored bless
/// ```
#[test]
#[ignore = "rewrites fixtures/model in the source tree"]
fn bless() {
    fixture::write_all(&shipped_dir()).unwrap();
}

#[test]
fn shipped_files_match_the_generator() {
    let tmp = tempfile::tempdir().unwrap();
    fixture::write_all(tmp.path()).unwrap();
    for name in FILES {
        let fresh = std::fs::read(tmp.path().join(name)).unwrap();
        let shipped = std::fs::read(shipped_dir().join(name))
            .unwrap_or_else(|_| panic!("{name} missing; run the ignored bless test"));
        assert_eq!(fresh, shipped, "{name} drifted from the generator");
    }
}

fn load_bundle() -> (ModelConfig, SamLayout) {
    let cfg = ModelConfig::load(&shipped_dir().join("model.toml")).unwrap();
    let meta = AccountMeta::load(&cfg.resolve(&cfg.files.accounts), b',').unwrap();
    (cfg, SamLayout::new(meta))
}

#[test]
fn shipped_raw_sam_reproduces_the_shipped_model_sam() {
    let (cfg, layout) = load_bundle();
    let model_sam = Sam::load(&cfg.resolve(&cfg.files.sam), &layout).unwrap();
    let raw_path = cfg.resolve(cfg.files.raw_sam.as_ref().unwrap());
    let raw = Sam::load(&raw_path, &layout).unwrap();
    let flows = WaterFlows::load(&cfg.resolve(&cfg.files.water_flows)).unwrap();
    let rates = WaterRates::load(&cfg.resolve(&cfg.files.water_rates)).unwrap();

    let (rebuilt, _) =
        run_pipeline(&raw, &flows, &rates, &cfg, cfg.water.irrigated_share, 1.0).unwrap();
    assert_eq!(rebuilt.len(), model_sam.len());
    for r in 0..rebuilt.len() {
        assert_eq!(rebuilt.accounts()[r].code, model_sam.accounts()[r].code);
        for c in 0..rebuilt.len() {
            // The cell format round-trips, so regeneration is bitwise.
            assert_eq!(
                rebuilt.flow_at(r, c),
                model_sam.flow_at(r, c),
                "cell ({}, {})",
                rebuilt.accounts()[r].code,
                rebuilt.accounts()[c].code
            );
        }
    }
}

#[test]
fn shipped_model_sam_calibrates_and_replicates_its_benchmark() {
    let (cfg, layout) = load_bundle();
    let sam = Sam::load(&cfg.resolve(&cfg.files.sam), &layout).unwrap();
    let rates = WaterRates::load(&cfg.resolve(&cfg.files.water_rates)).unwrap();
    for mobility in [WaterMobility::Specific, WaterMobility::Mobile] {
        let model = calibrate(&sam, &cfg, &rates, mobility).unwrap();
        let system = assemble(&model, &model.exogenous).unwrap();
        let mut res = vec![0.0; system.dim()];
        system.residuals(model.benchmark.as_slice(), &mut res);
        let worst = res.iter().fold(0.0_f64, |m, &r| m.max(r.abs()));
        assert!(
            worst <= CALIBRATION_RESIDUAL_TOL,
            "{mobility:?}: worst residual {worst:e}"
        );
    }
}
