//! EHR-to-label pipeline: age gate, diagnosis window, temporal-consistency
//! correction, and mode-with-worst-tie-break per scan.

use crate::error::{Error, Result};
use chrono::NaiveDate;
use std::collections::BTreeMap;
use std::path::Path;

/// Disease stage with total severity order CN < MCI < AD.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Cn,
    Mci,
    Ad,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Cn => "CN",
            Label::Mci => "MCI",
            Label::Ad => "AD",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Cn),
            1 => Some(Label::Mci),
            2 => Some(Label::Ad),
            _ => None,
        }
    }

    pub const ALL: [Label; 3] = [Label::Cn, Label::Mci, Label::Ad];
}

impl std::str::FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "CN" => Ok(Label::Cn),
            "MCI" => Ok(Label::Mci),
            "AD" => Ok(Label::Ad),
            other => Err(Error::MalformedRecord(format!("unknown diagnosis {other:?}"))),
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A dated diagnosis record from the health-record extract.
#[derive(Clone, Debug, PartialEq)]
pub struct EhrVisit {
    pub patient_id: String,
    pub visit_date: NaiveDate,
    pub age_at_scan: f64,
    pub diagnosis: Option<Label>,
}

/// A scan session awaiting a label.
#[derive(Clone, Debug)]
pub struct ScanRecord {
    pub patient_id: String,
    pub session_id: String,
    pub scan_date: NaiveDate,
}

/// Final (scan, label) example.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledScan {
    pub patient_id: String,
    pub session_id: String,
    pub scan_date: NaiveDate,
    pub label: Label,
}

/// Why a scan (or record) was dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct Exclusion {
    pub session_id: String,
    pub reason: String,
}

pub const AGE_CUTOFF: f64 = 55.0;
pub const WINDOW_DAYS: i64 = 180;

/// Keep visits where the patient is strictly over 55.
pub fn filter_age(visits: &[EhrVisit]) -> Vec<EhrVisit> {
    visits
        .iter()
        .filter(|v| v.age_at_scan > AGE_CUTOFF)
        .cloned()
        .collect()
}

/// Keep diagnosed visits within 180 days of the scan date (inclusive at the
/// boundary); visits with no diagnosis are removed.
pub fn filter_window(visits: &[EhrVisit], scan_date: NaiveDate) -> Vec<EhrVisit> {
    visits
        .iter()
        .filter(|v| {
            v.diagnosis.is_some()
                && (v.visit_date - scan_date).num_days().abs() <= WINDOW_DAYS
        })
        .cloned()
        .collect()
}

/// Running-max severity correction over one patient's date-ascending visits:
/// a milder diagnosis after a more severe one is raised to the severe label.
/// Undiagnosed visits pass through untouched.
pub fn enforce_temporal_consistency(visits: &[EhrVisit]) -> Result<Vec<EhrVisit>> {
    if visits.windows(2).any(|w| w[0].visit_date > w[1].visit_date) {
        return Err(Error::InvalidArgument(
            "temporal consistency requires date-ascending visits".into(),
        ));
    }
    let mut worst: Option<Label> = None;
    let mut out = Vec::with_capacity(visits.len());
    for v in visits {
        let mut v = v.clone();
        if let Some(d) = v.diagnosis {
            let corrected = worst.map_or(d, |w| w.max(d));
            worst = Some(corrected);
            v.diagnosis = Some(corrected);
        }
        out.push(v);
    }
    Ok(out)
}

/// Most frequent diagnosis; frequency ties go to the most severe tied label.
/// Undiagnosed visits are ignored; returns None if nothing is diagnosed.
pub fn mode_label(visits: &[EhrVisit]) -> Option<Label> {
    let mut counts = [0usize; 3];
    for v in visits {
        if let Some(d) = v.diagnosis {
            counts[d.index()] += 1;
        }
    }
    let best = *counts.iter().max().unwrap();
    if best == 0 {
        return None;
    }
    // scan from most severe down so ties prefer the worst diagnosis
    (0..3).rev().find(|&i| counts[i] == best).and_then(Label::from_index)
}

/// Full pipeline: age filter, per-patient temporal consistency, per-scan
/// window filter, then mode with worst-tie-break. Every excluded scan is
/// logged with its reason.
pub fn label_dataset(
    visits: &[EhrVisit],
    scans: &[ScanRecord],
) -> Result<(Vec<LabeledScan>, Vec<Exclusion>)> {
    let retained = filter_age(visits);
    let mut by_patient: BTreeMap<&str, Vec<EhrVisit>> = BTreeMap::new();
    for v in &retained {
        by_patient.entry(v.patient_id.as_str()).or_default().push(v.clone());
    }
    for patient_visits in by_patient.values_mut() {
        // stable sort keeps input order for same-date visits
        patient_visits.sort_by_key(|v| v.visit_date);
        *patient_visits = enforce_temporal_consistency(patient_visits)?;
    }

    let mut labeled = Vec::new();
    let mut excluded = Vec::new();
    for scan in scans {
        let corrected = by_patient.get(scan.patient_id.as_str());
        let windowed = corrected
            .map(|vs| filter_window(vs, scan.scan_date))
            .unwrap_or_default();
        match mode_label(&windowed) {
            Some(label) => labeled.push(LabeledScan {
                patient_id: scan.patient_id.clone(),
                session_id: scan.session_id.clone(),
                scan_date: scan.scan_date,
                label,
            }),
            None => excluded.push(Exclusion {
                session_id: scan.session_id.clone(),
                reason: "no in-window diagnosis".into(),
            }),
        }
    }
    Ok((labeled, excluded))
}

// --- CSV formats ---

/// Read the EHR extract: patient_id, visit_date (ISO-8601), age_at_scan,
/// diagnosis in {CN, MCI, AD, ""}. Malformed rows are logged, not dropped
/// silently.
pub fn read_ehr_csv(path: &Path) -> Result<(Vec<EhrVisit>, Vec<Exclusion>)> {
    let mut r = csv::Reader::from_path(path)?;
    let mut visits = Vec::new();
    let mut bad = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2; // header is line 1
        let rec = match rec {
            Ok(rec) => rec,
            Err(e) => {
                bad.push(Exclusion {
                    session_id: format!("ehr-line-{line}"),
                    reason: format!("unreadable row: {e}"),
                });
                continue;
            }
        };
        match parse_ehr_record(&rec) {
            Ok(v) => visits.push(v),
            Err(e) => bad.push(Exclusion {
                session_id: format!("ehr-line-{line}"),
                reason: e.to_string(),
            }),
        }
    }
    Ok((visits, bad))
}

fn parse_ehr_record(rec: &csv::StringRecord) -> Result<EhrVisit> {
    if rec.len() < 4 {
        return Err(Error::MalformedRecord(format!("expected 4 fields, got {}", rec.len())));
    }
    let visit_date = NaiveDate::parse_from_str(&rec[1], "%Y-%m-%d")
        .map_err(|e| Error::MalformedRecord(format!("bad visit_date {:?}: {e}", &rec[1])))?;
    let age_at_scan: f64 = rec[2]
        .parse()
        .map_err(|e| Error::MalformedRecord(format!("bad age {:?}: {e}", &rec[2])))?;
    if age_at_scan < 0.0 {
        return Err(Error::MalformedRecord(format!("negative age {age_at_scan}")));
    }
    let diagnosis = match &rec[3] {
        "" => None,
        s => Some(s.parse()?),
    };
    Ok(EhrVisit {
        patient_id: rec[0].to_string(),
        visit_date,
        age_at_scan,
        diagnosis,
    })
}

/// Read scans from the dataset manifest columns (patient_id, session_id,
/// scan_date).
pub fn read_scans_csv(path: &Path) -> Result<(Vec<ScanRecord>, Vec<Exclusion>)> {
    let mut r = csv::Reader::from_path(path)?;
    let mut scans = Vec::new();
    let mut bad = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        if rec.len() < 3 {
            bad.push(Exclusion {
                session_id: format!("scan-line-{line}"),
                reason: format!("expected >= 3 fields, got {}", rec.len()),
            });
            continue;
        }
        match NaiveDate::parse_from_str(&rec[2], "%Y-%m-%d") {
            Ok(scan_date) => scans.push(ScanRecord {
                patient_id: rec[0].to_string(),
                session_id: rec[1].to_string(),
                scan_date,
            }),
            Err(e) => bad.push(Exclusion {
                session_id: rec[1].to_string(),
                reason: format!("bad scan_date {:?}: {e}", &rec[2]),
            }),
        }
    }
    Ok((scans, bad))
}

pub fn write_labeled_csv(path: &Path, rows: &[LabeledScan]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["patient_id", "session_id", "scan_date", "label"])?;
    for r in rows {
        w.write_record([
            r.patient_id.as_str(),
            r.session_id.as_str(),
            &r.scan_date.format("%Y-%m-%d").to_string(),
            r.label.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labeled_csv(path: &Path) -> Result<Vec<LabeledScan>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(LabeledScan {
            patient_id: rec[0].to_string(),
            session_id: rec[1].to_string(),
            scan_date: NaiveDate::parse_from_str(&rec[2], "%Y-%m-%d")
                .map_err(|e| Error::MalformedRecord(format!("bad scan_date: {e}")))?,
            label: rec[3].parse()?,
        });
    }
    Ok(rows)
}

pub fn write_exclusions_csv(path: &Path, rows: &[Exclusion]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["session_id", "reason"])?;
    for r in rows {
        w.write_record([r.session_id.as_str(), r.reason.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn visit(patient: &str, date: &str, age: f64, dx: Option<Label>) -> EhrVisit {
        EhrVisit {
            patient_id: patient.into(),
            visit_date: d(date),
            age_at_scan: age,
            diagnosis: dx,
        }
    }

    #[test]
    fn age_filter_is_strict() {
        let visits = vec![
            visit("p", "2020-01-01", 55.0, Some(Label::Cn)),
            visit("p", "2020-01-02", 56.0, Some(Label::Cn)),
        ];
        let kept = filter_age(&visits);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].age_at_scan, 56.0);
        assert!(filter_age(&[]).is_empty());
    }

    #[test]
    fn window_boundaries() {
        let scan = d("2020-06-30");
        let visits = vec![
            visit("p", "2020-01-02", 70.0, Some(Label::Cn)), // 180 days before: kept
            visit("p", "2020-12-28", 70.0, Some(Label::Cn)), // 181 days after: removed
            visit("p", "2020-07-10", 70.0, None),            // no diagnosis: removed
        ];
        assert_eq!((scan - d("2020-01-02")).num_days(), 180);
        assert_eq!((d("2020-12-28") - scan).num_days(), 181);
        let kept = filter_window(&visits, scan);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].visit_date, d("2020-01-02"));
    }

    #[test]
    fn temporal_consistency_running_max() {
        let seq = [Label::Cn, Label::Ad, Label::Mci, Label::Cn];
        let visits: Vec<EhrVisit> = seq
            .iter()
            .enumerate()
            .map(|(i, &l)| visit("p", &format!("2020-01-{:02}", i + 1), 70.0, Some(l)))
            .collect();
        let out = enforce_temporal_consistency(&visits).unwrap();
        let labels: Vec<Label> = out.iter().map(|v| v.diagnosis.unwrap()).collect();
        assert_eq!(labels, vec![Label::Cn, Label::Ad, Label::Ad, Label::Ad]);
        // dates unchanged
        assert!(out.iter().zip(&visits).all(|(a, b)| a.visit_date == b.visit_date));
    }

    #[test]
    fn temporal_consistency_non_decreasing_unchanged() {
        let visits = vec![
            visit("p", "2020-01-01", 70.0, Some(Label::Cn)),
            visit("p", "2020-01-02", 70.0, Some(Label::Cn)),
            visit("p", "2020-01-03", 70.0, Some(Label::Mci)),
        ];
        let out = enforce_temporal_consistency(&visits).unwrap();
        assert_eq!(out, visits);
        let single = vec![visit("p", "2020-01-01", 70.0, Some(Label::Ad))];
        assert_eq!(enforce_temporal_consistency(&single).unwrap(), single);
    }

    #[test]
    fn temporal_consistency_rejects_unsorted() {
        let visits = vec![
            visit("p", "2020-02-01", 70.0, Some(Label::Cn)),
            visit("p", "2020-01-01", 70.0, Some(Label::Cn)),
        ];
        assert!(enforce_temporal_consistency(&visits).is_err());
    }

    #[test]
    fn mode_label_majority_and_ties() {
        let mk = |labels: &[Label]| -> Vec<EhrVisit> {
            labels
                .iter()
                .map(|&l| visit("p", "2020-01-01", 70.0, Some(l)))
                .collect()
        };
        assert_eq!(mode_label(&mk(&[Label::Cn, Label::Cn, Label::Mci])), Some(Label::Cn));
        assert_eq!(mode_label(&mk(&[Label::Mci, Label::Ad])), Some(Label::Ad));
        // frequency tie {CN:2, AD:2}, severity breaks it
        assert_eq!(
            mode_label(&mk(&[Label::Cn, Label::Cn, Label::Ad, Label::Ad, Label::Mci])),
            Some(Label::Ad)
        );
        assert_eq!(mode_label(&[]), None);
    }

    #[test]
    fn mode_label_order_invariant() {
        let labels = [Label::Ad, Label::Cn, Label::Mci, Label::Cn, Label::Ad];
        let base: Vec<EhrVisit> = labels
            .iter()
            .map(|&l| visit("p", "2020-01-01", 70.0, Some(l)))
            .collect();
        let expected = mode_label(&base);
        let mut rotated = base.clone();
        for _ in 0..labels.len() {
            rotated.rotate_left(1);
            assert_eq!(mode_label(&rotated), expected);
        }
    }

    #[test]
    fn pipeline_accounts_for_every_scan() {
        let visits = vec![
            visit("p1", "2020-01-01", 70.0, Some(Label::Mci)),
            visit("p2", "2020-01-01", 40.0, Some(Label::Ad)), // too young
        ];
        let scans = vec![
            ScanRecord { patient_id: "p1".into(), session_id: "s1".into(), scan_date: d("2020-01-05") },
            ScanRecord { patient_id: "p2".into(), session_id: "s2".into(), scan_date: d("2020-01-05") },
            ScanRecord { patient_id: "p3".into(), session_id: "s3".into(), scan_date: d("2020-01-05") },
        ];
        let (labeled, excluded) = label_dataset(&visits, &scans).unwrap();
        assert_eq!(labeled.len() + excluded.len(), scans.len());
        assert_eq!(labeled.len(), 1);
        assert_eq!(labeled[0].label, Label::Mci);
        assert!(excluded.iter().all(|e| e.reason == "no in-window diagnosis"));
    }

    #[test]
    fn pipeline_is_deterministic() {
        let visits = vec![
            visit("p1", "2020-01-01", 70.0, Some(Label::Ad)),
            visit("p1", "2020-02-01", 70.0, Some(Label::Cn)),
        ];
        let scans = vec![ScanRecord {
            patient_id: "p1".into(),
            session_id: "s1".into(),
            scan_date: d("2020-02-15"),
        }];
        let a = label_dataset(&visits, &scans).unwrap();
        let b = label_dataset(&visits, &scans).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }
}
