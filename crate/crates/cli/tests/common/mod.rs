//! Phantom workspace and CLI runners shared by the CLI test targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use seqcontrast::{approx_intensity, write_nifti, Intent, SequenceKind, ThetaSet, TissueTable, Volume};

pub const BIN: &str = env!("CARGO_BIN_EXE_seqcontrast");
pub const N: usize = 24;

pub const TABLE_15: &str = "field_tesla 1.5\ncsf 1.0 4000 2000\ngm 0.86 950 100\nwm 0.77 600 80\n";
pub const TABLE_3: &str = "field_tesla 3\ncsf 1.0 4400 1800\ngm 0.86 1331 110\nwm 0.77 832 80\n";

pub fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

pub fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn class_of(i: usize, j: usize, k: usize) -> usize {
    let idx = i + N * (j + N * k);
    let n = N * N * N;
    if idx < n * 3 / 10 {
        0
    } else if idx < n * 65 / 100 {
        1
    } else {
        2
    }
}

pub fn table() -> TissueTable {
    TissueTable::parse(TABLE_15, "t").unwrap()
}

pub fn vol(intent: Intent, f: impl Fn(usize) -> f64) -> Volume {
    Volume::from_fn([N; 3], [1.0; 3], intent, |i, j, k| f(class_of(i, j, k))).unwrap()
}

pub fn image(theta: &ThetaSet) -> Volume {
    let t = table().tissues();
    vol(Intent::Intensity, |c| approx_intensity(t[c].as_beta(), theta).unwrap())
}

/// Phantom inputs for every command, written into `dir`.
pub fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("t15.txt"), TABLE_15).unwrap();
    std::fs::write(d.join("t3.txt"), TABLE_3).unwrap();
    let t = table().tissues();
    write_nifti(&vol(Intent::NmrRho, |c| t[c].rho), d.join("rho.nii")).unwrap();
    write_nifti(&vol(Intent::NmrT1, |c| t[c].t1), d.join("t1.nii")).unwrap();
    write_nifti(&vol(Intent::NmrT2, |c| t[c].t2), d.join("t2.nii")).unwrap();
    write_nifti(&vol(Intent::Label, |c| (c + 1) as f64), d.join("labels.nii")).unwrap();
    let thetas = [
        (SequenceKind::Mprage, [0.2, -6.0e-4, 2.0e-8]),
        (SequenceKind::Flash, [0.1, -250.0, -20.0]),
        (SequenceKind::T2Space, [0.3, -2.0e-4, 25.0]),
    ];
    for (kind, th) in thetas {
        for s in 0..3 {
            let th = th.map(|x| x * (1.0 + 0.1 * s as f64));
            let theta = ThetaSet::new(kind, th).unwrap();
            write_nifti(&image(&theta), d.join(format!("{}_{s}.nii", kind.name()))).unwrap();
        }
    }
    let mut corpus = String::new();
    for kind in ["MPRAGE", "FLASH", "T2SPACE"] {
        for s in 0..3 {
            corpus += &format!("{kind}_{s}.nii\t-\t{kind}\n");
        }
    }
    std::fs::write(d.join("corpus.tsv"), corpus).unwrap();
    std::fs::write(
        d.join("subjects.tsv"),
        "s1\tMPRAGE_0.nii\tMPRAGE\trho.nii\tt1.nii\tt2.nii\tlabels.nii\t-\n",
    )
    .unwrap();
    dir
}

pub fn thetas_of(text: &str) -> Vec<ThetaSet> {
    ThetaSet::parse_all(text, "stdout").unwrap()
}

/// Runs the full workflow in `d` and returns the paths of every output.
pub fn pipeline(d: &Path, threads: &str) -> Vec<PathBuf> {
    let t = ["--threads", threads, "--seed", "17", "--tissue-table", "t15.txt"];
    let with = |rest: &[&str]| -> Vec<String> { t.iter().chain(rest).map(|s| s.to_string()).collect() };
    let call = |rest: &[&str]| {
        let a = with(rest);
        ok(d, &a.iter().map(String::as_str).collect::<Vec<_>>())
    };
    call(&["estimate", "--corpus", "corpus.tsv", "-o", "thetas.txt"]);
    for k in ["MPRAGE", "FLASH", "T2SPACE"] {
        call(&["grid", "--theta", "thetas.txt", "--kind", k, "--bins", "4", "-o", &format!("grid_{k}.txt")]);
    }
    call(&["synth", "--rho", "rho.nii", "--t1", "t1.nii", "--t2", "t2.nii", "--grid", "grid_MPRAGE.txt", "-o", "synth.nii", "--pairs-out", "pairs.psbr", "--pairs-target", "t1", "--pairs-count", "3", "--patch", "8"]);
    call(&["emit", "--subjects", "subjects.tsv", "--grid", "grid_FLASH.txt", "grid_T2SPACE.txt", "grid_MPRAGE.txt", "--count", "8", "--patch", "8", "--labels", "4", "-o", "batches.psab"]);
    call(&["emit", "--subjects", "subjects.tsv", "--grid", "grid_FLASH.txt", "grid_T2SPACE.txt", "grid_MPRAGE.txt", "--count", "256", "--patch", "6", "--labels", "4", "-o", "covered.psab"]);
    call(&["fitmef", "--image", "FLASH_0.nii:3", "FLASH_1.nii:5", "FLASH_2.nii:10", "--tr", "20", "--te", "5", "--out-rho", "grho.nii", "--out-t1", "fit_t1.nii", "--out-valid", "valid.nii"]);
    std::fs::write(d.join("manifest.tsv"), "a\tx\tlabels.nii\na\ty\tlabels.nii\nb\tx\tlabels.nii\nb\ty\tlabels.nii\n").unwrap();
    std::fs::write(d.join("structures.txt"), "1 CSF\n2 GM\n3 WM\n").unwrap();
    call(&["eval", "--manifest", "manifest.tsv", "--structures", "structures.txt", "-o", "report.tsv"]);
    call(&["eval", "--dice", "labels.nii", "labels.nii", "--structures", "structures.txt", "-o", "dice.tsv"]);
    [
        "thetas.txt", "grid_MPRAGE.txt", "grid_FLASH.txt", "grid_T2SPACE.txt", "synth.nii", "pairs.psbr", "batches.psab",
        "covered.psab", "grho.nii", "fit_t1.nii", "valid.nii", "report.tsv", "dice.tsv",
    ]
    .iter()
    .map(|f| d.join(f))
    .collect()
}

