//! Walk one patient's EHR history through each labeling stage: the age
//! gate, temporal consistency, the +/-180-day window, and the mode vote.

use chrono::NaiveDate;
use nfuse::labeling::{
    enforce_temporal_consistency, filter_age, filter_window, mode_label, EhrVisit, Label,
};

fn visit(days: u64, age: f64, dx: Option<Label>) -> EhrVisit {
    EhrVisit {
        patient_id: "p001".into(),
        visit_date: NaiveDate::from_ymd_opt(2021, 1, 1).unwrap() + chrono::Days::new(days),
        age_at_scan: age,
        diagnosis: dx,
    }
}

fn show(stage: &str, visits: &[EhrVisit]) {
    let rendered: Vec<String> = visits
        .iter()
        .map(|v| {
            format!("{}:{}", v.visit_date, v.diagnosis.map_or("-", |d| d.as_str()))
        })
        .collect();
    println!("{stage:<22} {}", rendered.join("  "));
}

fn main() -> nfuse::Result<()> {
    // one under-age visit, plus a CN reading after an AD diagnosis
    let history = vec![
        visit(0, 54.9, Some(Label::Cn)),
        visit(100, 62.0, Some(Label::Mci)),
        visit(200, 62.3, Some(Label::Ad)),
        visit(300, 62.6, Some(Label::Cn)),
        visit(700, 63.7, Some(Label::Cn)),
    ];
    show("raw", &history);

    let aged = filter_age(&history);
    show("age > 55", &aged);

    let consistent = enforce_temporal_consistency(&aged)?;
    show("monotone severity", &consistent);

    let scan_date = NaiveDate::from_ymd_opt(2021, 10, 1).unwrap();
    let windowed = filter_window(&consistent, scan_date);
    show("within 180 days", &windowed);

    match mode_label(&windowed) {
        Some(label) => println!("assigned label: {}", label.as_str()),
        None => println!("no label assignable"),
    }
    Ok(())
}
