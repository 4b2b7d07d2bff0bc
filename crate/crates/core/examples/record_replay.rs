//! Regenerate `fixtures/replay.jsonl`: runs ingest and extract on the fixture
//! corpus and stores one canned chat answer per emotion excerpt.

use std::path::Path;

use normminer::excerpt::{read_jsonl, Emotion, Excerpt};
use normminer::norms::{chat_key, render_prompt, TemplateSet};
use normminer::pipeline::{Pipeline, PipelineConfig, RunOptions, Stage};
use normminer::provider::ReplayFile;

/// Anchor-line fragment and the answer the mock model gives for it.
const ANSWERS: &[(&str, &str)] = &[
    ("treated your old mother", "son, male, not taking care of his old mother"),
    ("my son topped the exam", "mother, female, her son topping the exam"),
    ("live in shame if she marries", "family, NA, daughter marrying against their wishes"),
    ("came back to serve the village", "father, male, his son returning to serve the village"),
    ("no one will marry her daughter", "girl's parent, NA, not able to marry off their daughters"),
    ("telling the truth, son", "father, male, son telling the truth"),
    ("stealing from those people", "Snake, male, stealing and preying on people"),
    ("lying to your sister", "brother, male, lying to his sister"),
    ("finished the marathon", "woman, female, finishing the marathon"),
];

fn main() -> normminer::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut cfg = PipelineConfig::load(&fixtures.join("pipeline.toml"))?;
    cfg.chat.replay = None;
    let tmp = tempfile::tempdir()?;
    let opts = RunOptions {
        output_dir: Some(tmp.path().to_path_buf()),
        offline: true,
        ..Default::default()
    };
    let persona = cfg.chat.persona;
    let model = cfg.chat.model.clone();
    let industries = cfg.industries();
    let p = Pipeline::new(cfg, &opts)?;
    p.run(Stage::Ingest)?;
    p.run(Stage::Extract)?;

    let excerpts: Vec<Excerpt> = read_jsonl(&std::fs::read_to_string(tmp.path().join("excerpts.jsonl"))?)?;
    let templates = TemplateSet::for_industries(&industries, persona)?;
    let mut replay = ReplayFile::default();
    for ex in excerpts.iter().filter(|e| e.emotion != Emotion::Control) {
        let anchor = ex.anchor_text.as_deref().unwrap_or_default();
        let (_, answer) = ANSWERS
            .iter()
            .find(|(frag, _)| anchor.contains(frag))
            .unwrap_or_else(|| panic!("no canned answer for `{anchor}`"));
        let t = templates.get(&ex.industry, ex.emotion).expect("template");
        let messages = render_prompt(t, ex)?;
        replay.insert(chat_key(&model, &messages), answer.to_string());
    }
    std::fs::write(fixtures.join("replay.jsonl"), replay.to_jsonl())?;
    println!("wrote {} replay entries", replay.len());
    Ok(())
}
