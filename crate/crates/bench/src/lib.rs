//! Phantom inputs shared by the benchmarks.

use seqcontrast::augment::Subject;
use seqcontrast::estimate::TissueNmr;
use seqcontrast::phantom::{shell_phantom, Phantom};
use seqcontrast::{SequenceKind, ThetaSet, TissueTable};

pub fn table() -> TissueTable {
    let t = |rho, t1, t2| TissueNmr { rho, t1, t2 };
    TissueTable::new(1.5, t(1.0, 4000.0, 2000.0), t(0.86, 950.0, 100.0), t(0.77, 600.0, 80.0)).unwrap()
}

pub fn mprage_theta() -> ThetaSet {
    ThetaSet::new(SequenceKind::Mprage, [0.2, -6e-4, 2e-8]).unwrap()
}

pub fn phantom(n: usize) -> Phantom {
    shell_phantom(n, &table(), 0.03, 7).unwrap()
}

pub fn phantom_subject(n: usize) -> Subject {
    let p = phantom(n);
    let image = p.image(&mprage_theta()).unwrap();
    Subject::new("bench", &image, SequenceKind::Mprage, p.nmr, p.labels, p.mask).unwrap()
}
