use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use protok::synth::SynthConfig;

fn protok(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_protok")).args(args).output().expect("run protok")
}

fn ok(args: &[&str]) -> String {
    let out = protok(args);
    assert!(out.status.success(), "protok {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fixture(dir: &Path, n: usize) -> PathBuf {
    let c = SynthConfig { sequences: n, families: 10, ..Default::default() }.generate();
    let p = dir.join("corpus.fasta");
    std::fs::write(&p, c.to_fasta(60)).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let fasta = fixture(dir.path(), 60);
    for (method, size) in [("per-aa", "33"), ("bpe", "200"), ("unigram", "100")] {
        let (a, b) = (dir.path().join(format!("{method}.a")), dir.path().join(format!("{method}.b")));
        for out in [&a, &b] {
            ok(&["train", "--method", method, "--vocab-size", size, "--in", s(&fasta), "--out", s(out)]);
        }
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "{method}");
    }
}

#[test]
fn encode_decode_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let fasta = fixture(dir.path(), 40);
    for method in ["bpe", "unigram"] {
        let model = dir.path().join(method);
        ok(&["train", "--method", method, "--vocab-size", "120", "--in", s(&fasta), "--out", s(&model)]);
        let toks = dir.path().join("tokens.txt");
        ok(&["encode", "--model", s(&model), "--in", s(&fasta), "--out", s(&toks)]);
        let text = std::fs::read_to_string(&toks).unwrap();
        assert!(text.starts_with("# protok-tokens\tseed=42"));
        let decoded = ok(&["decode", "--model", s(&model), "--in", s(&toks)]);
        assert_eq!(decoded, std::fs::read_to_string(&fasta).unwrap(), "{method}");
    }
}

#[test]
fn mask_plan_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let fasta = fixture(dir.path(), 30);
    let model = dir.path().join("m");
    ok(&["train", "--method", "per-aa", "--in", s(&fasta), "--out", s(&model)]);
    let toks = dir.path().join("t");
    ok(&["encode", "--model", s(&model), "--in", s(&fasta), "--out", s(&toks)]);
    let run = |seed: &str, plan: &Path| {
        ok(&["mask", "--model", s(&model), "--in", s(&toks), "--plan", s(plan), "--seed", seed]);
        std::fs::read_to_string(plan).unwrap()
    };
    let (p1, p2, p3) = (dir.path().join("p1"), dir.path().join("p2"), dir.path().join("p3"));
    let a = run("7", &p1);
    assert_eq!(a, run("7", &p2));
    assert_ne!(a, run("8", &p3));
    assert!(a.starts_with("# protok-mask-plan\tseed=7\tmask_rate=0.15"));
    let original = std::fs::read_to_string(&toks).unwrap();
    let masked = ok(&["mask", "--model", s(&model), "--in", s(&toks), "--plan", s(&p1), "--seed", "7"]);
    for ((plan, orig), m) in a.lines().skip(1).zip(original.lines().skip(1)).zip(masked.lines().skip(1)) {
        let cols: Vec<&str> = plan.split('\t').collect();
        let orig: Vec<&str> = orig.split('\t').nth(1).unwrap().split(' ').collect();
        let m: Vec<&str> = m.split('\t').nth(1).unwrap().split(' ').collect();
        for (pos, id) in cols[1].split(' ').zip(cols[2].split(' ')) {
            let pos: usize = pos.parse().unwrap();
            assert_eq!(orig[pos], id);
            assert_eq!(m[pos], "4");
        }
    }
}

#[test]
fn sweep_has_one_row_per_method_and_size() {
    let dir = tempfile::tempdir().unwrap();
    let fasta = fixture(dir.path(), 120);
    let records = dir.path().join("records.tsv");
    let sizes = "50,100,200,400,800,1600,3200";
    let args = ["sweep", "--train", s(&fasta), "--holdout", "20", "--methods", "bpe,unigram", "--sizes", sizes];
    let table = ok(&[&args[..], &["--records", s(&records)]].concat());
    let mut lines = table.lines();
    assert!(lines.next().unwrap().starts_with("# seed=42"));
    assert_eq!(lines.next().unwrap(), "method\tvocab_size\tperplexity\tnormalized_perplexity\ttokens_per_residue");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 14);
    assert!(rows[..7].iter().all(|r| r.starts_with("bpe\t")));
    assert!(rows[7..].iter().all(|r| r.starts_with("unigram\t")));
    let recs = std::fs::read_to_string(&records).unwrap();
    assert_eq!(recs.lines().filter(|l| !l.starts_with('#')).count(), 42);
    assert_eq!(table, ok(&args));
}

#[test]
fn manifest_validate_and_eval() {
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/manifests");
    let out = ok(&["manifest", "validate", s(&shipped)]);
    assert_eq!(out.lines().count(), 33);

    let dir = tempfile::tempdir().unwrap();
    let manifest = shipped.join("yeast.default.manifest");
    std::fs::create_dir_all(dir.path().join("yeast/default")).unwrap();
    let csv = "sequence_a,sequence_b,label\nMKV,GG,1\nAA,CC,0\nLLK,MM,1\nWW,YY,0\n";
    for split in ["train", "validation", "test"] {
        std::fs::write(dir.path().join(format!("yeast/default/{split}.csv")), csv).unwrap();
    }
    ok(&["manifest", "validate", s(&manifest), "--root", s(dir.path())]);
    let preds = dir.path().join("preds.txt");
    std::fs::write(&preds, "1\n0\n0\n0\n").unwrap();
    let out = ok(&["eval", "--manifest", s(&manifest), "--predictions", s(&preds), "--root", s(dir.path())]);
    assert_eq!(out, "Yeast.default.accuracy\t7.5000000000000000e-1\t4\n");
}

#[test]
fn failures_give_one_line_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.fasta");
    std::fs::write(&bad, ">a\nMKV\n>b\nMK1V\n").unwrap();
    let out = protok(&["train", "--method", "bpe", "--vocab-size", "40", "--in", s(&bad), "--out", s(&dir.path().join("m"))]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("bad.fasta") && err.contains("line 4") && err.contains("column 3"), "{err}");

    let fasta = fixture(dir.path(), 5);
    let out = protok(&["train", "--method", "bpe", "--vocab-size", "20", "--in", s(&fasta), "--out", s(&dir.path().join("m"))]);
    assert!(!out.status.success());
    let out = protok(&["train", "--method", "bpe", "--in", s(&fasta), "--out", s(&fasta)]);
    assert!(!out.status.success());
    assert!(!protok(&["frobnicate"]).status.success());
}
