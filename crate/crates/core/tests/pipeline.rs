use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use normminer::pipeline::{render_report, Pipeline, PipelineConfig, RunOptions, Stage};
use normminer::Error;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn pipeline(out: &Path) -> Pipeline {
    let cfg = PipelineConfig::load(&fixtures().join("pipeline.toml")).unwrap();
    let opts = RunOptions {
        output_dir: Some(out.to_path_buf()),
        offline: true,
        ..Default::default()
    };
    Pipeline::new(cfg, &opts).unwrap()
}

#[test]
fn extract_before_ingest_is_missing_upstream() {
    let dir = tempfile::tempdir().unwrap();
    match pipeline(dir.path()).run(Stage::Extract) {
        Err(Error::MissingUpstream { upstream, artifact, .. }) => {
            assert_eq!(upstream, "ingest");
            assert_eq!(artifact, "corpus.jsonl");
        }
        other => panic!("expected MissingUpstream, got {other:?}"),
    }
    assert!(matches!(pipeline(dir.path()).run(Stage::Assoc), Err(Error::MissingUpstream { .. })));
}

#[test]
fn report_renders_without_cluster_stage() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path());
    for st in [Stage::Ingest, Stage::Extract, Stage::Lexstats, Stage::Report] {
        p.run(st).unwrap();
    }
    let md = fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(md.contains("| Industry | Movies | Tokens | Shame | Pride | Control |"));
    assert!(md.contains("### bollywood / shame"));
    assert!(md.contains("## Themes: shame\n\n_Not available: run the `cluster` stage._"));
    assert!(md.contains("run the `norms` stage"));
    assert_eq!(render_report(dir.path()).unwrap(), md);
}

#[test]
fn rerunning_one_stage_reproduces_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path());
    p.run_all().unwrap();
    let before = p.load_manifest().unwrap();
    assert_eq!(before.stages.len(), 7);

    let norms = &before.stages["norms"];
    for name in norms.outputs.keys() {
        fs::remove_file(dir.path().join(name)).unwrap();
    }
    assert!(matches!(p.run(Stage::Cluster), Err(Error::MissingUpstream { .. })));
    p.run(Stage::Norms).unwrap();
    assert_eq!(p.load_manifest().unwrap(), before);
}

#[test]
fn seed_override_changes_controls_only() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = || PipelineConfig::load(&fixtures().join("pipeline.toml")).unwrap();
    let run = |dir: &Path, seed| {
        let opts = RunOptions {
            output_dir: Some(dir.to_path_buf()),
            seed: Some(seed),
            offline: true,
            ..Default::default()
        };
        let p = Pipeline::new(cfg(), &opts).unwrap();
        p.run(Stage::Ingest).unwrap();
        p.run(Stage::Extract).unwrap();
        p.load_manifest().unwrap()
    };
    let ma = run(a.path(), 1);
    let mb = run(b.path(), 2);
    assert_ne!(ma.config_hash, mb.config_hash);
    assert_eq!(ma.stages["ingest"], mb.stages["ingest"]);
    assert_eq!(ma.stages["extract"].outputs["exclusions.jsonl"], mb.stages["extract"].outputs["exclusions.jsonl"]);
    assert_eq!(ma.stages["extract"].counts, mb.stages["extract"].counts);
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixtures().join("pipeline.toml")).unwrap();
    let cfg = PipelineConfig::from_toml(&text.replace("alpha = 0.05", "alpha = 1.5"), &fixtures()).unwrap();
    let opts = RunOptions {
        output_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    assert!(matches!(Pipeline::new(cfg, &opts), Err(Error::ConfigInvalid(_))));
    let cfg = PipelineConfig::from_toml(&text.replace("lexicon.tsv", "nope.tsv"), &fixtures()).unwrap();
    assert!(matches!(Pipeline::new(cfg, &opts), Err(Error::ConfigInvalid(_))));
}

fn cli(args: &[&str], config: &Path, out: &Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_normminer"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "off")
        .status()
        .unwrap()
        .code()
        .unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixtures().join("pipeline.toml");
    assert_eq!(cli(&["extract", "--offline"], &config, dir.path()), 1);
    assert_eq!(cli(&["bogus", "--offline"], &config, dir.path()), 1);
    assert_eq!(cli(&["ingest", "--offline"], &config, dir.path()), 0);
    assert_eq!(cli(&["extract", "--offline", "--seed", "9"], &config, dir.path()), 0);

    // no replay file and no network: norms fails with a provider error
    let text = fs::read_to_string(&config).unwrap().replace("replay = \"replay.jsonl\"\n", "");
    let cfg_dir = tempfile::tempdir().unwrap();
    for f in ["lexicon.tsv", "keywords.json"] {
        fs::copy(fixtures().join(f), cfg_dir.path().join(f)).unwrap();
    }
    let text = text.replace("root = \"corpus/", &format!("root = \"{}/corpus/", fixtures().display()));
    let bare = cfg_dir.path().join("pipeline.toml");
    fs::write(&bare, text).unwrap();
    assert_eq!(cli(&["ingest", "--offline"], &bare, dir.path()), 0);
    assert_eq!(cli(&["extract", "--offline"], &bare, dir.path()), 0);
    assert_eq!(cli(&["norms", "--offline"], &bare, dir.path()), 2);
    let failures = fs::read_to_string(dir.path().join("norm_failures.jsonl")).unwrap();
    assert_eq!(failures.lines().count(), 9);
    assert!(dir.path().join("manifest.json").exists());
}
