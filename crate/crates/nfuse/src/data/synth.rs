//! Synthetic paired-modality dataset generator.
//!
//! Stands in for the clinical dataset: already-registered 121x145x121 T1 +
//! FLAIR pairs whose class signal is a centered bright lesion blob whose
//! radius grows with disease stage, with modality-specific contrast. The
//! blob center is jittered per session but shared between the two
//! modalities of a session, so the pair stays spatially consistent. A
//! matching EHR extract is generated so the labeling pipeline can reproduce
//! the ground-truth labels.

use super::{Modality, ScanPair, Volume, PREPROCESSED_EXTENTS};
use crate::error::{Error, Result};
use crate::labeling::{EhrVisit, Label};
use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Lesion radius in voxels per stage; monotone in severity so even a
/// mean-intensity feature separates the classes.
fn blob_radius(label: Label) -> f64 {
    match label {
        Label::Cn => 6.0,
        Label::Mci => 10.0,
        Label::Ad => 14.0,
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub pairs: Vec<ScanPair>,
    /// Ground-truth stage per patient (constant across their sessions).
    pub patient_labels: Vec<(String, Label)>,
    /// EHR extract that reproduces the ground truth through the labeling
    /// pipeline.
    pub ehr: Vec<EhrVisit>,
}

impl SyntheticDataset {
    pub fn label_of(&self, patient_id: &str) -> Option<Label> {
        self.patient_labels
            .iter()
            .find(|(p, _)| p == patient_id)
            .map(|(_, l)| *l)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Deterministic function of (seed, parameters): same seed, same bytes.
pub fn generate_synthetic_dataset(
    n_patients: usize,
    sessions_per_patient: usize,
    class_balance: [f64; 3],
    seed: u64,
) -> Result<SyntheticDataset> {
    if n_patients < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 patients (one per class reachable), got {n_patients}"
        )));
    }
    if sessions_per_patient < 1 {
        return Err(Error::InvalidArgument("sessions_per_patient must be >= 1".into()));
    }
    let bal_sum: f64 = class_balance.iter().sum();
    if bal_sum <= 0.0 || class_balance.iter().any(|&b| b < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "class balance must be nonnegative with positive sum, got {class_balance:?}"
        )));
    }
    let fractions = [
        class_balance[0] / bal_sum,
        class_balance[1] / bal_sum,
        class_balance[2] / bal_sum,
    ];
    let counts = super::split::largest_remainder(n_patients, fractions);
    if counts.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "degenerate class balance {class_balance:?}: class count {counts:?} has an empty class"
        )));
    }

    let mut patient_labels = Vec::with_capacity(n_patients);
    let mut remaining = counts;
    let mut class_cursor = 0usize;
    for i in 0..n_patients {
        // round-robin over classes with remaining quota
        let mut c = class_cursor;
        while remaining[c % 3] == 0 {
            c += 1;
        }
        remaining[c % 3] -= 1;
        class_cursor = c + 1;
        patient_labels.push((format!("p{i:03}"), Label::ALL[c % 3]));
    }

    let epoch_date = NaiveDate::from_ymd_opt(2020, 1, 6).unwrap();
    let mut pairs = Vec::with_capacity(n_patients * sessions_per_patient);
    let mut ehr = Vec::new();
    for (pi, (patient_id, label)) in patient_labels.iter().enumerate() {
        let age = 60.0 + (pi % 25) as f64;
        for si in 0..sessions_per_patient {
            let scan_date = epoch_date
                .checked_add_days(Days::new((pi * 37 + si * 41) as u64))
                .unwrap();
            let session_seed = splitmix(seed ^ splitmix((pi as u64) << 20 | si as u64));
            let mut rng = ChaCha8Rng::seed_from_u64(session_seed);
            // shared geometry for both modalities of the session
            let center = [
                60.0 + rng.gen_range(-3.0..3.0),
                72.0 + rng.gen_range(-3.0..3.0),
                60.0 + rng.gen_range(-3.0..3.0),
            ];
            let radius = blob_radius(*label) + rng.gen_range(-0.5..0.5);
            let t1 = render_volume(Modality::T1, center, radius, rng.gen::<u64>());
            let flair = render_volume(Modality::Flair, center, radius, rng.gen::<u64>());
            pairs.push(ScanPair {
                patient_id: patient_id.clone(),
                session_id: format!("{patient_id}-s{si}"),
                scan_date,
                t1,
                flair,
            });
            // visits that survive every labeling filter and agree on the label
            for offset in [-30i64, 10, 60] {
                let visit_date = if offset < 0 {
                    scan_date.checked_sub_days(Days::new((-offset) as u64)).unwrap()
                } else {
                    scan_date.checked_add_days(Days::new(offset as u64)).unwrap()
                };
                ehr.push(EhrVisit {
                    patient_id: patient_id.clone(),
                    visit_date,
                    age_at_scan: age,
                    diagnosis: Some(*label),
                });
            }
        }
    }
    Ok(SyntheticDataset {
        pairs,
        patient_labels,
        ehr,
    })
}

fn render_volume(modality: Modality, center: [f64; 3], radius: f64, noise_seed: u64) -> Volume {
    let [de, he, we] = PREPROCESSED_EXTENTS;
    let (brain, blob, background) = match modality {
        Modality::T1 => (0.55f32, 0.95f32, 0.05f32),
        Modality::Flair => (0.40f32, 0.90f32, 0.05f32),
    };
    let semi_axes = [45.0f64, 55.0, 45.0];
    let brain_center = [60.0f64, 72.0, 60.0];
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut data = Vec::with_capacity(de * he * we);
    for z in 0..de {
        for y in 0..he {
            for x in 0..we {
                let p = [z as f64, y as f64, x as f64];
                let mut v = background;
                let ell: f64 = p
                    .iter()
                    .zip(&brain_center)
                    .zip(&semi_axes)
                    .map(|((c, bc), sa)| {
                        let d = (c - bc) / sa;
                        d * d
                    })
                    .sum();
                if ell <= 1.0 {
                    v = brain;
                    let dist: f64 = p
                        .iter()
                        .zip(&center)
                        .map(|(c, bc)| (c - bc) * (c - bc))
                        .sum::<f64>()
                        .sqrt();
                    // soft-edged lesion
                    let edge = 1.0 / (1.0 + ((dist - radius) / 1.2).exp());
                    v += (blob - brain) * edge as f32;
                }
                v += rng.gen_range(-0.04..0.04);
                data.push(v);
            }
        }
    }
    Volume::new(PREPROCESSED_EXTENTS, data, modality).expect("consistent extents")
}
