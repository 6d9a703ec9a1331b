use std::fmt::Write as _;
use std::path::Path;

use seqcontrast::augment::psab::TargetKind;
use seqcontrast::augment::{emit_batches, ContrastGrids, EmitConfig, Subject};
use seqcontrast::metrics::{dice_table, Measurement};
use seqcontrast::{
    build_field_transform, build_grid_with, consistency_report, estimate_corpus, estimate_from_volume,
    export_regression_pairs, fit_rho_t1, map_theta, read_nifti, sample_uniform, solve_t2, structure_volumes,
    synthesize_gamma_a, write_nifti, BoundsRule, BrainMask, Error, Intent, MefAcquisition, NmrMaps, RegressionExport,
    Result, SequenceKind, StructureSet, ThetaSet, Volume,
};

use crate::io::{self, name};
use crate::{EmitArgs, EstimateArgs, EvalArgs, FitmefArgs, Global, GridArgs, SynthArgs};

fn output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => io::write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn estimate(g: &Global, a: &EstimateArgs) -> Result<()> {
    let table = io::tissue_table(g.tissue_table.as_ref(), "--tissue-table")?;
    if let Some(f) = a.field {
        if (f - table.field_tesla).abs() > 1e-9 {
            return Err(Error::Usage(format!(
                "--field {f} does not match the tissue table field strength {}",
                table.field_tesla
            )));
        }
    }
    let mut items = Vec::new();
    let mut sources = Vec::new();
    if let Some(image) = &a.image {
        let kind = io::kind(a.kind.as_deref().ok_or_else(|| Error::Usage("--kind is required with --image".into()))?, "--kind")?;
        let v = read_nifti(image)?;
        let mask = match &a.mask {
            Some(m) => io::read_mask(m)?,
            None => BrainMask::from_positive(&v),
        };
        items.push((v, mask, kind));
        sources.push(name(image));
    } else if let Some(corpus) = &a.corpus {
        for (_, f) in io::manifest(corpus, 3)? {
            let path = io::resolve(corpus, &f[0]);
            let v = read_nifti(&path)?;
            let mask = if f[1] == "-" {
                BrainMask::from_positive(&v)
            } else {
                io::read_mask(&io::resolve(corpus, &f[1]))?
            };
            items.push((v, mask, io::kind(&f[2], "corpus kind")?));
            sources.push(name(&path));
        }
    } else {
        return Err(Error::Usage("either --image or --corpus is required".into()));
    }

    let thetas: Vec<ThetaSet> = if items.len() == 1 {
        let (v, m, k) = &items[0];
        vec![estimate_from_volume(v, m, *k, &table)?.theta]
    } else {
        estimate_corpus(&items, &table)?
            .into_iter()
            .zip(&sources)
            .map(|(r, s)| r.map_err(|e| Error::Estimation(format!("{s}: {e}"))))
            .collect::<Result<_>>()?
    };

    let mapped = match (a.map_to, &a.map_table) {
        (Some(to), Some(path)) => {
            let target = io::tissue_table(Some(path), "--map-table")?;
            if (to - target.field_tesla).abs() > 1e-9 {
                return Err(Error::Usage(format!(
                    "--map-to {to} does not match the --map-table field strength {}",
                    target.field_tesla
                )));
            }
            let mapped = thetas
                .iter()
                .map(|t| map_theta(t, &build_field_transform(&target, &table, t.kind)?))
                .collect::<Result<Vec<_>>>()?;
            Some((to, mapped))
        }
        _ => None,
    };

    let mut text = String::new();
    match mapped {
        None => {
            for (t, s) in thetas.iter().zip(&sources) {
                let _ = writeln!(text, "# {s}\n{t}");
            }
        }
        Some((to, mapped)) => {
            for ((t, m), s) in thetas.iter().zip(&mapped).zip(&sources) {
                let _ = writeln!(text, "# {s} at {} T\n# {t}\n# mapped to {to} T\n{m}", table.field_tesla);
            }
        }
    }
    output(a.out.as_deref(), &text)
}

pub fn grid(_g: &Global, a: &GridArgs) -> Result<()> {
    let want = a.kind.as_deref().map(|k| io::kind(k, "--kind")).transpose()?;
    let mut all = Vec::new();
    for p in &a.theta {
        all.extend(io::thetas(p)?);
    }
    let selected: Vec<ThetaSet> = match want {
        Some(k) => all.into_iter().filter(|t| t.kind == k).collect(),
        None => all,
    };
    if selected.is_empty() {
        return Err(Error::Usage("no parameter sets selected; check --theta files and --kind".into()));
    }
    let rule = if a.literal_bounds { BoundsRule::Literal } else { BoundsRule::Outward };
    let grid = build_grid_with(&selected, a.bins, rule)
        .map_err(|e| if selected.iter().any(|t| t.kind != selected[0].kind) {
            Error::Usage(format!("{e}; select one with --kind"))
        } else {
            e
        })?;
    io::write_text(&a.out, &grid.to_string())
}

fn pick_theta(list: Vec<ThetaSet>, kind: Option<SequenceKind>, source: &str) -> Result<ThetaSet> {
    list.into_iter()
        .find(|t| kind.is_none_or(|k| t.kind == k))
        .ok_or_else(|| Error::Usage(format!("no matching parameter set in {source}")))
}

fn load_nmr(rho: &Path, t1: &Path, t2: &Path) -> Result<NmrMaps> {
    NmrMaps::new(
        io::read_as(rho, Intent::NmrRho)?,
        io::read_as(t1, Intent::NmrT1)?,
        io::read_as(t2, Intent::NmrT2)?,
    )
}

pub fn synth(g: &Global, a: &SynthArgs) -> Result<()> {
    let kind = a.kind.as_deref().map(|k| io::kind(k, "--kind")).transpose()?;
    let theta = match (&a.theta, &a.grid) {
        (Some(p), _) => pick_theta(io::thetas(p)?, kind, &name(p))?,
        (None, Some(p)) => sample_uniform(&io::grid(p)?, g.seed),
        (None, None) => return Err(Error::Usage("either --theta or --grid is required".into())),
    };
    let nmr = load_nmr(&a.rho, &a.t1, &a.t2)?;
    let mask = match &a.mask {
        Some(m) => io::read_mask(m)?,
        None => BrainMask::from_positive(&nmr.rho),
    };
    let image = synthesize_gamma_a(&nmr, &theta, &mask)?;
    write_nifti(&image, &a.out)?;
    println!("{theta}");
    if let Some(pairs) = &a.pairs_out {
        let (target_kind, target) = match a.pairs_target.to_ascii_lowercase().as_str() {
            "rho" => (TargetKind::Rho, &nmr.rho),
            "t1" => (TargetKind::T1, &nmr.t1),
            "t2" => (TargetKind::T2, &nmr.t2),
            other => return Err(Error::Usage(format!("--pairs-target: expected rho, t1 or t2, got `{other}`"))),
        };
        let ex = RegressionExport {
            synth: &image,
            target,
            target_kind,
            theta,
            subject_id: &a.subject_id,
            patch_size: [a.patch; 3],
            count: a.pairs_count,
            seed: g.seed,
        };
        export_regression_pairs(&ex, pairs)?;
    }
    Ok(())
}

pub fn emit(g: &Global, a: &EmitArgs) -> Result<()> {
    let grids = ContrastGrids::from_list(&a.grids.iter().map(|p| io::grid(p)).collect::<Result<Vec<_>>>()?)?;
    let mut subjects = Vec::new();
    for (line, f) in io::manifest(&a.subjects, 8)? {
        let at = |i: usize| io::resolve(&a.subjects, &f[i]);
        let image = read_nifti(&at(1))?;
        let kind = io::kind(&f[2], "subject kind")?;
        let nmr = load_nmr(&at(3), &at(4), &at(5))?;
        let labels = io::read_as(&at(6), Intent::Label)?;
        let mask = if f[7] == "-" {
            BrainMask::from_positive(&labels)
        } else {
            io::read_mask(&at(7))?
        };
        subjects.push(
            Subject::new(&f[0], &image, kind, nmr, labels, mask)
                .map_err(|e| Error::Validation(format!("{} line {line}: {e}", name(&a.subjects))))?,
        );
    }
    let cfg = EmitConfig {
        count: a.count,
        patch_size: [a.patch; 3],
        label_count: a.labels,
        seed: g.seed,
        min_brain_fraction: a.min_brain,
    };
    let s = emit_batches(&subjects, &grids, &cfg, &a.out)?;
    println!(
        "{} records in {} groups, theta {}",
        s.records,
        s.groups,
        if s.full_coverage { "from full-coverage schedules" } else { "sampled per group" }
    );
    Ok(())
}

pub fn fitmef(_g: &Global, a: &FitmefArgs) -> Result<()> {
    let mut images = Vec::new();
    let mut angles = Vec::new();
    for spec in &a.images {
        let (path, deg) = spec
            .rsplit_once(':')
            .ok_or_else(|| Error::Usage(format!("--image: expected PATH:DEGREES, got `{spec}`")))?;
        let deg: f64 = deg
            .parse()
            .map_err(|_| Error::Usage(format!("--image: bad flip angle `{deg}` in `{spec}`")))?;
        images.push(read_nifti(Path::new(path))?);
        angles.push(deg.to_radians());
    }
    let mef = MefAcquisition::new(images, angles, a.tr, a.te)?;
    let mask = match &a.mask {
        Some(m) => io::read_mask(m)?,
        None => BrainMask::full(mef.dims()),
    };
    let fit = fit_rho_t1(&mef, &mask)?;
    write_nifti(&fit.g_rho, &a.out_rho)?;
    write_nifti(&fit.t1, &a.out_t1)?;
    let spacing = mef.images[0].spacing();
    if let Some(p) = &a.out_valid {
        write_nifti(&fit.valid.to_volume(spacing)?, p)?;
    }
    println!("{} of {} mask voxels fitted", fit.valid.count(), mask.count());
    if let (Some(img), Some(tp), Some(out)) = (&a.t2_image, &a.t2_theta, &a.out_t2) {
        let theta = pick_theta(
            io::thetas(tp)?.into_iter().filter(|t| t.kind.is_flash_like()).collect(),
            None,
            &name(tp),
        )?;
        let s: Volume = read_nifti(img)?;
        let t2 = solve_t2(&s, &fit.g_rho, &fit.t1, &theta, &fit.valid)?;
        write_nifti(&t2.t2, out)?;
        println!("{} voxels with a valid T2", t2.valid.count());
    }
    Ok(())
}

pub fn eval(_g: &Global, a: &EvalArgs) -> Result<()> {
    let structures = match &a.structures {
        Some(p) => StructureSet::parse(&io::read_text(p)?, &name(p))?,
        None => StructureSet::default(),
    };
    if let [x, y] = a.dice.as_slice() {
        let text = dice_table(&io::read_as(x, Intent::Label)?, &io::read_as(y, Intent::Label)?, &structures)?;
        return output(a.out.as_deref(), &text);
    }
    let manifest = a
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Usage("either --manifest or --dice is required".into()))?;
    let mut ms = Vec::new();
    for (_, f) in io::manifest(manifest, 3)? {
        let seg = io::read_as(&io::resolve(manifest, &f[2]), Intent::Label)?;
        ms.push(Measurement {
            subject: f[0].clone(),
            acquisition: f[1].clone(),
            volumes: structure_volumes(&seg, &structures)?,
        });
    }
    output(a.out.as_deref(), &consistency_report(&ms, &structures)?.to_tsv())
}
