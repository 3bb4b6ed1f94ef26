use std::fs;
use std::path::Path;

use exformer_cli::{run, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};
use exformer_core::signal::load_wav;
use exformer_core::training::{read_log, EvalReport};

const TINY: &str = r#"
seed = 4

[data]
val_utts_per_speaker = 2
val_items = 2
test_items = 3

[mix]
segment_seconds = 0.5

[embedder]
n_blstm_layers = 1
hidden_units = 8
embed_dim = 8

[pretrain]
steps = 2
segment_seconds = 0.5
speakers_per_batch = 2
utts_per_speaker = 2

[model]
feature_dim = 16
chunk_len = 8
n_blocks = 1
layers_per_path = 1
n_heads = 2
ff_dim = 32
embed_dim = 8

[train]
draws_per_epoch = 2
max_epochs = 1

[semi]
draws_per_epoch = 3
max_epochs = 1
"#;

fn exformer(args: &[&str]) -> i32 {
    run(std::iter::once("exformer").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_version_and_usage_errors() {
    assert_eq!(exformer(&["--help"]), EXIT_OK);
    assert_eq!(exformer(&["--version"]), EXIT_OK);
    assert_eq!(exformer(&[]), EXIT_USAGE);
    assert_eq!(exformer(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(
        exformer(&["train", "--fusion", "sum", "--train", "x", "--out", "y"]),
        EXIT_USAGE
    );
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(
        exformer(&[
            "evaluate",
            "--ckpt",
            "/nonexistent.ckpt",
            "--test",
            "/nonexistent.jsonl"
        ]),
        EXIT_RUNTIME
    );
    assert_eq!(
        exformer(&[
            "pretrain-embedder",
            "--train",
            "/nonexistent.jsonl",
            "--out",
            s(&out),
            "--set",
            "model.bogus=1"
        ]),
        EXIT_RUNTIME
    );
}

#[test]
fn full_pipeline_on_a_tiny_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let data = d.join("data");
    let test = d.join("test");
    assert_eq!(
        exformer(&[
            "synth-data",
            "--out",
            s(&data),
            "--speakers",
            "3",
            "--utts",
            "4",
            "--min-dur",
            "0.6",
            "--max-dur",
            "0.8"
        ]),
        EXIT_OK
    );
    assert_eq!(
        exformer(&[
            "synth-data",
            "--out",
            s(&test),
            "--speakers",
            "2",
            "--utts",
            "2",
            "--first-speaker",
            "50",
            "--min-dur",
            "0.6",
            "--max-dur",
            "0.8",
        ]),
        EXIT_OK
    );
    let manifest = data.join("manifest.jsonl");
    assert_eq!(fs::read_to_string(&manifest).unwrap().lines().count(), 12);

    let emb_dir = d.join("emb");
    assert_eq!(
        exformer(&[
            "pretrain-embedder",
            "--config",
            s(&cfg),
            "--train",
            s(&manifest),
            "--out",
            s(&emb_dir)
        ]),
        EXIT_OK
    );
    let emb_ckpt = emb_dir.join("embedder.ckpt");
    assert!(emb_ckpt.exists());

    let st1 = d.join("stage1");
    let args = [
        "train",
        "--config",
        s(&cfg),
        "--train",
        s(&manifest),
        "--embedder",
        s(&emb_ckpt),
        "--out",
        s(&st1),
        "--fusion",
        "mult",
    ];
    assert_eq!(exformer(&args), EXIT_OK);
    let resolved = fs::read_to_string(st1.join("config.toml")).unwrap();
    assert!(resolved.contains("fusion_mode = \"mult\""), "{resolved}");
    assert!(resolved.contains("seed = 4"));
    assert_eq!(read_log(&st1.join("train_log.jsonl")).unwrap().len(), 1);
    assert!(st1.join("best.ckpt").exists() && st1.join("last.ckpt").exists());

    // Rerunning with the same inputs gives identical checkpoints.
    let again = d.join("again");
    let mut args2 = args;
    args2[8] = s(&again);
    assert_eq!(exformer(&args2), EXIT_OK);
    assert_eq!(
        fs::read(st1.join("last.ckpt")).unwrap(),
        fs::read(again.join("last.ckpt")).unwrap()
    );
    assert_eq!(
        resolved,
        fs::read_to_string(again.join("config.toml")).unwrap()
    );

    // Resume continues to the new epoch budget.
    let resumed = d.join("resumed");
    assert_eq!(
        exformer(&[
            "train",
            "--config",
            s(&cfg),
            "--train",
            s(&manifest),
            "--resume",
            s(&st1.join("last.ckpt")),
            "--out",
            s(&resumed),
            "--set",
            "train.max_epochs=2",
        ]),
        EXIT_OK
    );

    let st2 = d.join("stage2");
    let semi = |fusion: &str, out: &Path| {
        exformer(&[
            "train-semi",
            "--config",
            s(&cfg),
            "--train",
            s(&manifest),
            "--stage1",
            s(&st1.join("last.ckpt")),
            "--out",
            s(out),
            "--fusion",
            fusion,
        ])
    };
    assert_eq!(semi("add", &d.join("wrong")), EXIT_RUNTIME);
    assert_eq!(semi("mult", &st2), EXIT_OK);
    assert_eq!(
        read_log(&st2.join("train_log.jsonl")).unwrap()[0].lr,
        7.5e-5
    );

    let report_path = d.join("report.json");
    assert_eq!(
        exformer(&[
            "evaluate",
            "--config",
            s(&cfg),
            "--ckpt",
            s(&st2.join("last.ckpt")),
            "--test",
            s(&test.join("manifest.jsonl")),
            "--out",
            s(&report_path),
        ]),
        EXIT_OK
    );
    let report: EvalReport =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report.n_items, 3);
    assert!(report.mean_si_sdr.is_finite());

    let mix = test.join("spk050_utt000.wav");
    let enr = test.join("spk050_utt001.wav");
    let (ot, or) = (d.join("t.wav"), d.join("r.wav"));
    assert_eq!(
        exformer(&[
            "extract",
            "--ckpt",
            s(&st2.join("best.ckpt")),
            "--mixture",
            s(&mix),
            "--enroll",
            s(&enr),
            "--out-target",
            s(&ot),
            "--out-residual",
            s(&or),
        ]),
        EXIT_OK
    );
    assert_eq!(load_wav(&ot).unwrap().len(), load_wav(&mix).unwrap().len());
    assert_eq!(load_wav(&or).unwrap().len(), load_wav(&mix).unwrap().len());
}
