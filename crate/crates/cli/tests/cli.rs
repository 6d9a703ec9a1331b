mod common;

use common::{ok, pipeline, run, thetas_of, workspace};
use seqcontrast::augment::psab::read_psab;

#[test]
fn help_lists_every_flag() {
    let expect: &[(&str, &[&str])] = &[
        ("estimate", &["--image", "--mask", "--kind", "--corpus", "--field", "--map-to", "--map-table", "--out"]),
        ("grid", &["--theta", "--kind", "--bins", "--literal-bounds", "--out"]),
        ("synth", &["--rho", "--t1", "--t2", "--mask", "--theta", "--grid", "--kind", "--out", "--pairs-out", "--pairs-target", "--pairs-count", "--patch", "--subject-id"]),
        ("emit", &["--subjects", "--grid", "--count", "--patch", "--labels", "--min-brain", "--out"]),
        ("fitmef", &["--image", "--tr", "--te", "--mask", "--out-rho", "--out-t1", "--out-valid", "--t2-image", "--t2-theta", "--out-t2"]),
        ("eval", &["--manifest", "--dice", "--structures", "--out"]),
    ];
    let d = tempfile::tempdir().unwrap();
    for (cmd, flags) in expect {
        let help = ok(d.path(), &[cmd, "--help"]);
        for f in flags.iter().chain(&["--seed", "--threads", "--tissue-table"]) {
            assert!(help.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn missing_file_names_path() {
    let dir = workspace();
    let out = run(dir.path(), &["--tissue-table", "t15.txt", "estimate", "--image", "nope.nii", "--kind", "MPRAGE"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nope.nii") && err.contains("error[io]"), "{err}");
    let out = run(dir.path(), &["estimate", "--image", "MPRAGE_0.nii", "--kind", "MPRAGE"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--tissue-table"));
}

#[test]
fn estimate_recovers_and_maps() {
    let dir = workspace();
    let d = dir.path();
    let out = ok(d, &["--tissue-table", "t15.txt", "estimate", "--image", "MPRAGE_1.nii", "--kind", "MPRAGE"]);
    let got = thetas_of(&out);
    let want = [0.2, -6.0e-4, 2.0e-8].map(|x| x * 1.1);
    for (g, w) in got[0].theta.iter().zip(want) {
        assert!(((g - w) / w).abs() < 1e-3, "{g} vs {w}");
    }

    let out = ok(
        d,
        &["--tissue-table", "t3.txt", "estimate", "--image", "FLASH_0.nii", "--kind", "FLASH", "--field", "3", "--map-to", "1.5", "--map-table", "t15.txt"],
    );
    assert!(out.contains("mapped to 1.5 T"));
    let commented: Vec<&str> = out.lines().filter(|l| l.starts_with("# FLASH ")).collect();
    assert_eq!(commented.len(), 1, "{out}");
    assert_eq!(thetas_of(&out).len(), 1);

    let bad = run(d, &["--tissue-table", "t3.txt", "estimate", "--image", "FLASH_0.nii", "--kind", "FLASH", "--field", "1.5"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn grid_contains_corpus() {
    let dir = workspace();
    let d = dir.path();
    let mut files = Vec::new();
    for s in 0..3 {
        let f = format!("theta_{s}.txt");
        ok(d, &["--tissue-table", "t15.txt", "estimate", "--image", &format!("FLASH_{s}.nii"), "--kind", "FLASH", "-o", &f]);
        files.push(f);
    }
    ok(d, &["grid", "--theta", &files[0], &files[1], &files[2], "--bins", "10", "-o", "grid.txt"]);
    let grid = seqcontrast::ParamGrid::parse(&std::fs::read_to_string(d.join("grid.txt")).unwrap(), "g").unwrap();
    assert_eq!(grid.bins, 10);
    for f in &files {
        for t in thetas_of(&std::fs::read_to_string(d.join(f)).unwrap()) {
            assert!(grid.contains(&t));
        }
    }
}

#[test]
fn workflow_outputs() {
    let dir = workspace();
    let d = dir.path();
    pipeline(d, "1");
    let (h, recs) = read_psab(d.join("batches.psab")).unwrap();
    assert_eq!(h.record_count, 8);
    assert_eq!(recs.len(), 8);
    let report = std::fs::read_to_string(d.join("report.tsv")).unwrap();
    for row in report.lines().skip(2) {
        assert!(row.split('\t').skip(1).all(|c| c == "0.0000 (0.0000)"), "{row}");
    }
    let dice = std::fs::read_to_string(d.join("dice.tsv")).unwrap();
    assert!(dice.lines().skip(1).all(|l| l.split('\t').nth(1) == Some("1.000000")));
}

#[test]
fn outputs_independent_of_run_and_threads() {
    let a = workspace();
    let b = workspace();
    let c = workspace();
    let pa = pipeline(a.path(), "1");
    let pb = pipeline(b.path(), "1");
    let pc = pipeline(c.path(), "3");
    for ((x, y), z) in pa.iter().zip(&pb).zip(&pc) {
        let bytes = std::fs::read(x).unwrap();
        assert_eq!(bytes, std::fs::read(y).unwrap(), "{} differs across runs", x.display());
        assert_eq!(bytes, std::fs::read(z).unwrap(), "{} differs across thread counts", x.display());
    }
}

#[test]
fn emit_rejects_odd_count() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["--tissue-table", "t15.txt", "estimate", "--corpus", "corpus.tsv", "-o", "thetas.txt"]);
    for k in ["MPRAGE", "FLASH", "T2SPACE"] {
        ok(d, &["grid", "--theta", "thetas.txt", "--kind", k, "--bins", "4", "-o", &format!("grid_{k}.txt")]);
    }
    let out = run(d, &["emit", "--subjects", "subjects.tsv", "--grid", "grid_FLASH.txt", "grid_T2SPACE.txt", "grid_MPRAGE.txt", "--count", "6", "--patch", "8", "--labels", "4", "-o", "x.psab"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("multiple of 4"));
}
