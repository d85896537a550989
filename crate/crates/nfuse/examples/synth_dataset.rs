//! Generate a small synthetic cohort and show what it contains.

use nfuse::data::synth::generate_synthetic_dataset;

fn main() -> nfuse::Result<()> {
    let ds = generate_synthetic_dataset(9, 2, [1.0, 1.0, 1.0], 42)?;

    println!("patients:");
    for (patient, label) in &ds.patient_labels {
        println!("  {patient}  {}", label.as_str());
    }
    println!("\nsessions:");
    for pair in &ds.pairs {
        let [x, y, z] = pair.t1.extents();
        println!(
            "  {} {} {}  t1+flair {x}x{y}x{z}",
            pair.patient_id, pair.session_id, pair.scan_date
        );
    }
    println!("\nehr visits: {}", ds.ehr.len());
    for v in ds.ehr.iter().take(6) {
        let dx = v.diagnosis.map_or("-", |d| d.as_str());
        println!("  {} {} age {:.1} dx {dx}", v.patient_id, v.visit_date, v.age_at_scan);
    }
    Ok(())
}
