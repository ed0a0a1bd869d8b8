//! End-to-end smoke test: drives the full recipe through the binary on a
//! freshly generated synthetic corpus with a deliberately tiny config.

use std::path::Path;
use std::process::Command;

fn lark(dir: &Path, args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_lark"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn lark");
    assert!(
        out.status.success(),
        "lark {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn full_recipe_runs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(
        root.join("tiny.cfg"),
        "features.mel_bins = 12\n\
         model.num_layers = 1\n\
         model.hidden_units = 8\n\
         train.epochs = 2\n\
         train.minibatch = 4\n\
         train.eval_beam = 4\n\
         decode.beam = 8\n",
    )
    .unwrap();
    let cfg = ["--config", "tiny.cfg", "--seed", "5"];
    fn with_cfg<'a>(cfg: &[&'a str], args: &[&'a str]) -> Vec<&'a str> {
        let mut v = cfg.to_vec();
        v.extend_from_slice(args);
        v
    }

    lark(root, &with_cfg(&cfg, &["synth-corpus", "--out", "corpus"]));
    for f in ["train.jsonl", "dev.jsonl", "unsup.jsonl", "tokens.txt", "lexicon.txt", "lm.arpa"] {
        assert!(root.join("corpus/target").join(f).exists(), "missing {f}");
    }

    lark(
        root,
        &with_cfg(&cfg, &[
            "train", "--train", "corpus/target/train.jsonl", "--dev", "corpus/target/dev.jsonl",
            "--tokens", "corpus/target/tokens.txt", "--out", "scratch.ckpt", "--record",
            "scratch.json",
        ]),
    );
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("scratch.json")).unwrap()).unwrap();
    assert_eq!(record["dev_per_by_epoch"].as_array().unwrap().len(), 3);

    // Identical invocation must reproduce the checkpoint byte for byte.
    lark(
        root,
        &with_cfg(&cfg, &[
            "train", "--train", "corpus/target/train.jsonl", "--dev", "corpus/target/dev.jsonl",
            "--tokens", "corpus/target/tokens.txt", "--out", "scratch2.ckpt",
        ]),
    );
    assert_eq!(
        std::fs::read(root.join("scratch.ckpt")).unwrap(),
        std::fs::read(root.join("scratch2.ckpt")).unwrap()
    );

    lark(
        root,
        &with_cfg(&cfg, &[
            "adapt", "--init", "scratch.ckpt", "--train", "corpus/target/train.jsonl", "--dev",
            "corpus/target/dev.jsonl", "--tokens", "corpus/target/tokens.txt", "--lin", "--out",
            "adapted.ckpt",
        ]),
    );
    lark(
        root,
        &with_cfg(&cfg, &[
            "pseudo-label", "--teacher", "adapted.ckpt", "--unsup", "corpus/target/unsup.jsonl",
            "--source", "word-decode", "--lexicon", "corpus/target/lexicon.txt", "--lm",
            "corpus/target/lm.arpa", "--out", "labels.jsonl",
        ]),
    );
    let labels = std::fs::read_to_string(root.join("labels.jsonl")).unwrap();
    assert!(labels.lines().count() > 0, "no pseudo-labels produced");
    lark(
        root,
        &with_cfg(&cfg, &[
            "distill", "--init", "adapted.ckpt", "--train", "corpus/target/train.jsonl",
            "--unsup", "corpus/target/unsup.jsonl", "--labels", "labels.jsonl", "--dev",
            "corpus/target/dev.jsonl", "--out", "student.ckpt",
        ]),
    );

    lark(
        root,
        &with_cfg(&cfg, &[
            "evaluate", "--checkpoint", "student.ckpt", "--manifest", "corpus/target/test.jsonl",
            "--metric", "per", "--out", "per.json",
        ]),
    );
    let per: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("per.json")).unwrap()).unwrap();
    assert_eq!(per["metric"], "per");
    assert!(per["value_percent"].as_f64().unwrap() >= 0.0);

    lark(
        root,
        &with_cfg(&cfg, &[
            "evaluate", "--checkpoint", "student.ckpt", "--manifest", "corpus/target/test.jsonl",
            "--metric", "wer", "--lexicon", "corpus/target/lexicon.txt", "--lm",
            "corpus/target/lm.arpa", "--out", "wer.json",
        ]),
    );
    let wer: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("wer.json")).unwrap()).unwrap();
    assert_eq!(wer["metric"], "wer");

    lark(
        root,
        &with_cfg(&cfg, &[
            "decode", "--checkpoint", "student.ckpt", "--manifest", "corpus/target/test.jsonl",
            "--mode", "word", "--lexicon", "corpus/target/lexicon.txt", "--lm",
            "corpus/target/lm.arpa", "--out", "hyps.jsonl",
        ]),
    );
    let hyps = std::fs::read_to_string(root.join("hyps.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(hyps.lines().next().unwrap()).unwrap();
    assert!(first["id"].is_string());
    assert!(first["words"].is_array());
}
