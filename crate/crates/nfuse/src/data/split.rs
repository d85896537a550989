//! Patient-level train/validation/test assignment.

use crate::error::{Error, Result};
use crate::labeling::Label;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

/// Whole-patient split assignment: every patient lands in exactly one split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitAssignment {
    map: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn get(&self, patient_id: &str) -> Option<Split> {
        self.map.get(patient_id).copied()
    }

    pub fn patients_in(&self, split: Split) -> Vec<&str> {
        self.map
            .iter()
            .filter(|(_, &s)| s == split)
            .map(|(p, _)| p.as_str())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Split)> {
        self.map.iter().map(|(p, &s)| (p.as_str(), s))
    }
}

/// Largest-remainder apportionment of `n` seats over the fractions; remainder
/// ties go to the earlier split in (train, validation, test) order.
pub fn largest_remainder(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let ideal: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|&x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for i in 0..(n - assigned) {
        counts[order[i % 3]] += 1;
    }
    [counts[0], counts[1], counts[2]]
}

/// Assign whole patients to train/validation/test. With stratification the
/// patients are shuffled within their label group and interleaved
/// round-robin across groups before the proportional cut, keeping small
/// splits class-covered.
pub fn patient_split(
    patients: &[(String, Option<Label>)],
    fractions: [f64; 3],
    seed: u64,
    stratify_by_label: bool,
) -> Result<SplitAssignment> {
    if patients.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 patients for 3 splits, got {}",
            patients.len()
        )));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || fractions.iter().any(|&f| f < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be nonnegative and sum to 1, got {fractions:?}"
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    for (p, _) in patients {
        if !seen.insert(p.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate patient id {p:?}")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ordered: Vec<&str> = if stratify_by_label {
        let mut groups: BTreeMap<Option<Label>, Vec<&str>> = BTreeMap::new();
        for (p, l) in patients {
            groups.entry(*l).or_default().push(p.as_str());
        }
        let mut group_lists: Vec<Vec<&str>> = groups.into_values().collect();
        for g in group_lists.iter_mut() {
            g.shuffle(&mut rng);
        }
        let mut out = Vec::with_capacity(patients.len());
        let mut i = 0;
        loop {
            let mut any = false;
            for g in &group_lists {
                if let Some(&p) = g.get(i) {
                    out.push(p);
                    any = true;
                }
            }
            if !any {
                break;
            }
            i += 1;
        }
        out
    } else {
        let mut out: Vec<&str> = patients.iter().map(|(p, _)| p.as_str()).collect();
        out.shuffle(&mut rng);
        out
    };

    let counts = largest_remainder(patients.len(), fractions);
    let mut map = BTreeMap::new();
    for (i, p) in ordered.iter().enumerate() {
        let split = if i < counts[0] {
            Split::Train
        } else if i < counts[0] + counts[1] {
            Split::Validation
        } else {
            Split::Test
        };
        map.insert(p.to_string(), split);
    }
    Ok(SplitAssignment { map })
}

/// Split file CSV: patient_id, split.
pub fn write_split_csv(path: &Path, assignment: &SplitAssignment) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["patient_id", "split"])?;
    for (p, s) in assignment.iter() {
        w.write_record([p, s.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_split_csv(path: &Path) -> Result<SplitAssignment> {
    let mut r = csv::Reader::from_path(path)?;
    let mut map = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        map.insert(rec[0].to_string(), rec[1].parse()?);
    }
    Ok(SplitAssignment { map })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patients(n: usize) -> Vec<(String, Option<Label>)> {
        (0..n)
            .map(|i| (format!("p{i:03}"), Some(Label::ALL[i % 3])))
            .collect()
    }

    #[test]
    fn twenty_patients_split_14_3_3() {
        let a = patient_split(&patients(20), [0.70, 0.15, 0.15], 1, true).unwrap();
        let counts: Vec<usize> = Split::ALL.iter().map(|&s| a.patients_in(s).len()).collect();
        assert_eq!(counts, vec![14, 3, 3]);
    }

    #[test]
    fn realized_fractions_within_one_patient() {
        for n in [3usize, 7, 10, 30, 53, 100] {
            let a = patient_split(&patients(n), [0.70, 0.15, 0.15], 5, true).unwrap();
            for (i, &s) in Split::ALL.iter().enumerate() {
                let target = [0.70, 0.15, 0.15][i] * n as f64;
                let got = a.patients_in(s).len() as f64;
                assert!((got - target).abs() <= 1.0, "n={n} split {s:?}: {got} vs {target}");
            }
        }
    }

    #[test]
    fn every_patient_in_exactly_one_split() {
        let ps = patients(30);
        let a = patient_split(&ps, [0.70, 0.15, 0.15], 9, true).unwrap();
        assert_eq!(a.len(), 30);
        let total: usize = Split::ALL.iter().map(|&s| a.patients_in(s).len()).sum();
        assert_eq!(total, 30);
        for (p, _) in &ps {
            assert!(a.get(p).is_some());
        }
    }

    #[test]
    fn same_seed_identical_assignment() {
        let ps = patients(25);
        let a = patient_split(&ps, [0.70, 0.15, 0.15], 42, true).unwrap();
        let b = patient_split(&ps, [0.70, 0.15, 0.15], 42, true).unwrap();
        assert_eq!(a, b);
        let c = patient_split(&ps, [0.70, 0.15, 0.15], 43, true).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn stratified_splits_cover_all_classes() {
        let a = patient_split(&patients(30), [0.70, 0.15, 0.15], 3, true).unwrap();
        let ps = patients(30);
        for &s in &Split::ALL {
            let mut classes = std::collections::BTreeSet::new();
            for p in a.patients_in(s) {
                let label = ps.iter().find(|(q, _)| q == p).unwrap().1;
                classes.insert(label);
            }
            assert_eq!(classes.len(), 3, "split {s:?} missing a class");
        }
    }

    #[test]
    fn too_few_patients_rejected() {
        assert!(patient_split(&patients(2), [0.70, 0.15, 0.15], 0, true).is_err());
    }

    #[test]
    fn split_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.csv");
        let a = patient_split(&patients(10), [0.70, 0.15, 0.15], 4, false).unwrap();
        write_split_csv(&path, &a).unwrap();
        let b = read_split_csv(&path).unwrap();
        assert_eq!(a, b);
    }
}
