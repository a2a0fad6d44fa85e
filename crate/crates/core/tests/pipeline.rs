use std::fs;
use std::path::Path;

use exges_core::metrics::{control_table_from_csv, from_csv, MetricsReport};
use exges_core::numcore::Checkpoint;
use exges_core::pipeline::*;
use exges_core::Error;

fn tiny(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    for o in [
        "corpus.clips=12",
        "corpus.clip_duration_s=12.0",
        "corpus.motif_count=3",
        "split={ train = 0.5, val = 0.25, test = 0.25 }",
        "retrieval.steps=12",
        "retrieval.batch_size=8",
        "retrieval.queue_size=16",
        "retrieval.hidden=16",
        "retrieval.embedding_dim=8",
        "diffusion.diffusion_steps=8",
        "diffusion.frames=24",
        "diffusion.hidden=12",
        "diffusion.dilations=[1, 2]",
        "diffusion.train_steps=10",
        "diffusion.batch_size=3",
        "synthesis.max_windows=4",
        "synthesis.control=retrieval,frames:0..3",
    ] {
        cfg.apply_override(o).unwrap();
    }
    cfg.out_dir = out.to_path_buf();
    cfg
}

fn all_hashes(outcomes: &[StageOutcome]) -> Vec<(String, std::collections::BTreeMap<String, String>)> {
    outcomes.iter().map(|o| (o.manifest.stage.clone(), o.manifest.hashes())).collect()
}

#[test]
fn end_to_end_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ca, cb) = (tiny(a.path()), tiny(b.path()));
    let mut seen = Vec::new();
    let ra = run_all(&ca, |s, cached| seen.push((s, cached))).unwrap();
    assert_eq!(seen.len(), Stage::ALL.len());
    assert!(seen.iter().all(|(_, cached)| !cached));
    let rb = run_all(&cb, |_, _| {}).unwrap();
    assert_eq!(all_hashes(&ra), all_hashes(&rb));

    // Every produced file is listed with a matching hash.
    for o in &ra {
        for art in &o.manifest.artifacts {
            let bytes = fs::read(o.dir.join(&art.path)).unwrap();
            assert_eq!(art.bytes, bytes.len() as u64);
        }
        assert!(o.dir.starts_with(a.path().join(o.stage.name())));
        assert!(!o.dir.with_extension("partial").exists());
    }

    // A second run reuses everything.
    let mut cached = Vec::new();
    run_all(&ca, |_, c| cached.push(c)).unwrap();
    assert!(cached.iter().all(|&c| c));

    // Rerunning a single stage reproduces its bytes.
    let again = run_stage(&ca, Stage::Synthesize).unwrap();
    assert_eq!(again.manifest.hashes(), ra[4].manifest.hashes());
}

#[test]
fn stage_outputs_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let out = run_all(&cfg, |_, _| {}).unwrap();
    let dir_of = |s: Stage| out.iter().find(|o| o.stage == s).unwrap().dir.clone();

    // Retrieval keyframes are pinned exactly in the synthesized motion.
    let synth = dir_of(Stage::Synthesize);
    let index: SynthesisIndex = serde_json::from_slice(&fs::read(synth.join("synthesis.json")).unwrap()).unwrap();
    assert_eq!(index.windows.len(), 4);
    assert_eq!(index.seeds.len(), 4);
    let names: Vec<&str> = index.conditions.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, ["retrieval", "frames0", "frames1", "frames2", "frames3"]);
    let base = exges_core::corpus::load_base(&dir_of(Stage::TrainRetrieval).join("base.exgb")).unwrap();
    let retrieval = &index.conditions[0];
    let generated = load_condition(&synth, "retrieval", 4).unwrap();
    for (i, g) in generated.iter().enumerate() {
        let hit = retrieval.retrieved[i].as_ref().unwrap();
        let seg = base.segment(hit.segment_id).unwrap();
        let l = hit.keyframe_index.min(index.frames - 1);
        assert_eq!(retrieval.controlled[i], vec![l]);
        assert_eq!(g.row(l), seg.motion.frame(hit.keyframe_index));
    }
    for (k, cond) in index.conditions[1..].iter().enumerate() {
        assert!(cond.controlled.iter().all(|f| f.len() == k));
    }

    // Evaluation tables.
    let eval = dir_of(Stage::Evaluate);
    let control = control_table_from_csv(&fs::read_to_string(eval.join("control.csv")).unwrap()).unwrap();
    assert_eq!(control.iter().map(|r| r.frames).collect::<Vec<_>>(), [0, 1, 2, 3]);
    let rows: Vec<ComparisonRow> = from_csv(&fs::read_to_string(eval.join("comparison.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 5);
    for row in &rows {
        let report = MetricsReport::from_json(
            &fs::read_to_string(eval.join(format!("metrics_{}.json", row.condition))).unwrap(),
        )
        .unwrap();
        assert_eq!((report.mpjpe_mm, report.fgd, report.n_gen), (row.mpjpe_mm, row.fgd, row.n_gen));
        assert!(report.pa_mpjpe_mm <= report.mpjpe_mm + 1e-9);
    }
    let per_frame = fs::read_to_string(eval.join("per_frame_mpjpe.csv")).unwrap();
    assert_eq!(per_frame.lines().count(), index.frames + 1);

    // Report: one polyline point per logged step and a batch × candidates heatmap.
    let report = dir_of(Stage::Report);
    let svg = fs::read_to_string(report.join("diffusion_loss.svg")).unwrap();
    let points = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
    assert_eq!(points.split(' ').count(), cfg.diffusion.train_steps);
    let rlog: serde_json::Value =
        serde_json::from_slice(&fs::read(dir_of(Stage::TrainRetrieval).join("log.json")).unwrap()).unwrap();
    let steps = rlog["steps"].as_array().unwrap().len();
    let svg = fs::read_to_string(report.join("retrieval_loss.svg")).unwrap();
    let points = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
    assert_eq!(points.split(' ').count(), steps);
    let sim = rlog["final_similarity"].as_array().unwrap();
    let cells = sim.len() * sim[0].as_array().unwrap().len();
    let heat = fs::read_to_string(report.join("similarity_heatmap.svg")).unwrap();
    assert_eq!(heat.matches("class=\"cell\"").count(), cells);
    assert_eq!(sim.len(), cfg.retrieval.batch_size);

    // Regenerating the report is byte-identical.
    let before = fs::read(report.join("per_frame_mpjpe.svg")).unwrap();
    let again = run_stage(&cfg, Stage::Report).unwrap();
    assert_eq!(fs::read(again.dir.join("per_frame_mpjpe.svg")).unwrap(), before);

    // Checkpoint names follow window order.
    let ck = Checkpoint::load(&synth.join("frames2.exgt")).unwrap();
    assert!(ck.require("window3").is_ok());
}

#[test]
fn missing_upstream_is_named_and_leaves_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let err = run_stage(&cfg, Stage::TrainDiffusion).unwrap_err();
    match &err {
        Error::MissingArtifact { stage, .. } => assert_eq!(stage, "train-retrieval"),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(err.exit_code(), 3);
    let stage_root = dir.path().join("train-diffusion");
    let leftovers: Vec<_> = fs::read_dir(&stage_root).map(|d| d.collect()).unwrap_or_default();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn stage_hashes_track_their_inputs() {
    let cfg = RunConfig::default();
    let mut other = cfg.clone();
    other.apply_override("metrics.beat_sigma_s=0.2").unwrap();
    for s in [Stage::GenData, Stage::TrainDiffusion, Stage::Synthesize] {
        assert_eq!(stage_hash(&cfg, s).unwrap(), stage_hash(&other, s).unwrap());
    }
    for s in [Stage::Evaluate, Stage::Report] {
        assert_ne!(stage_hash(&cfg, s).unwrap(), stage_hash(&other, s).unwrap());
    }
    let mut reseeded = cfg.clone();
    reseeded.seed = 8;
    assert_eq!(stage_hash(&cfg, Stage::BuildBase).unwrap(), stage_hash(&reseeded, Stage::BuildBase).unwrap());
    assert_ne!(stage_hash(&cfg, Stage::TrainRetrieval).unwrap(), stage_hash(&reseeded, Stage::TrainRetrieval).unwrap());
}

#[test]
fn invalid_config_is_a_config_error() {
    let mut cfg = RunConfig::default();
    cfg.synthesis.control = "frames:x".into();
    let err = run_stage(&cfg, Stage::GenData).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn windows_and_seeds() {
    let cfg = tiny(Path::new("unused"));
    let corpus = exges_core::corpus::generate_corpus(&cfg.corpus).unwrap();
    let w = windows_of(&corpus.clips[..2], 100, 100);
    assert_eq!(w.len(), 2 * (corpus.clips[0].motion.frames / 100));
    assert!(w.windows(2).all(|p| p[0].clip_id != p[1].clip_id || p[1].start == p[0].start + 100));
    assert_eq!(windows_of(&corpus.clips, 24, 5).len(), 5);
    assert_ne!(window_seed(1, &w[0]), window_seed(1, &w[1]));
    assert_eq!(window_seed(1, &w[0]), window_seed(1, &w[0].clone()));
}

#[test]
fn failed_stage_leaves_no_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    for s in &Stage::ALL[..4] {
        run_stage(&cfg, *s).unwrap();
    }
    cfg.apply_override("synthesis.clip=999").unwrap();
    let err = run_stage(&cfg, Stage::Synthesize).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert_eq!(fs::read_dir(dir.path().join("synthesize")).unwrap().count(), 0);
}
