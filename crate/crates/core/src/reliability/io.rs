use std::fs;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use super::{Prototype, ReliabilityReport, SweepRow};
use crate::error::{Error, Result};
use crate::types::{ClassLabel, PredictionRecord};

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_records_csv(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record([
        "image_id",
        "truth",
        "predicted",
        "outcome",
        "p_ready",
        "cluster_id",
        "unreliability",
        "reliability",
        "swapped",
    ])
    .map_err(|e| csv_err(path, e))?;
    for r in records {
        w.write_record([
            r.image_id.clone(),
            opt(r.truth),
            r.predicted.to_string(),
            opt(r.outcome.map(|o| o.as_str())),
            r.scores.of(ClassLabel::Ready).to_string(),
            opt(r.cluster_id),
            opt(r.unreliability),
            opt(r.reliability()),
            r.swapped.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["threshold", "swap_set", "overall_accuracy", "average_class_accuracy"])
        .map_err(|e| csv_err(path, e))?;
    for r in rows {
        let set: Vec<String> = r.swap_set.iter().map(usize::to_string).collect();
        w.write_record([
            format!("{:.2}", r.threshold),
            set.join(" "),
            r.overall_accuracy.to_string(),
            opt(r.average_class_accuracy),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `<stem>.json`, `<stem>_clusters.csv` and `<stem>_records.csv`.
pub fn write_report(dir: &Path, stem: &str, report: &ReliabilityReport) -> Result<Vec<PathBuf>> {
    let json = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;

    let clusters = dir.join(format!("{stem}_clusters.csv"));
    let mut w = csv::Writer::from_path(&clusters).map_err(|e| csv_err(&clusters, e))?;
    w.write_record(["cluster_id", "total", "tp", "tn", "fp", "fn", "false_count", "r", "reliability", "swapped"])
        .map_err(|e| csv_err(&clusters, e))?;
    for c in &report.clusters {
        let m = &c.outcomes;
        w.write_record([
            c.cluster_id.to_string(),
            c.total.to_string(),
            m.tp.to_string(),
            m.tn.to_string(),
            m.fp.to_string(),
            m.fn_.to_string(),
            c.false_count.to_string(),
            c.r.to_string(),
            c.reliability().to_string(),
            report.swap_set.contains(&c.cluster_id).to_string(),
        ])
        .map_err(|e| csv_err(&clusters, e))?;
    }
    w.flush().map_err(|e| Error::io(&clusters, e))?;

    let records = dir.join(format!("{stem}_records.csv"));
    write_records_csv(&records, &report.records)?;
    Ok(vec![json, clusters, records])
}

/// Each prototype as a min-max scaled 8-bit PGM plus raw `f32` values.
pub fn write_prototypes(dir: &Path, protos: &[Prototype]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for p in protos {
        let m = &p.map;
        let (lo, hi) = (m.min(), m.max());
        let range = hi - lo;
        let pixels: Vec<u8> = m
            .values
            .iter()
            .map(|&v| if range > 0.0 { ((v - lo) / range * 255.0).round() as u8 } else { 0 })
            .collect();
        let pgm = dir.join(format!("prototype-{}.pgm", p.cluster_id));
        let file = fs::File::create(&pgm).map_err(|e| Error::io(&pgm, e))?;
        PnmEncoder::new(std::io::BufWriter::new(file))
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(&pixels, m.width as u32, m.height as u32, ExtendedColorType::L8)
            .map_err(|e| Error::format(&pgm, e.to_string()))?;

        let raw = dir.join(format!("prototype-{}.smap", p.cluster_id));
        let bytes: Vec<u8> = m.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))?;
        let side = dir.join(format!("prototype-{}.smap.json", p.cluster_id));
        let meta = serde_json::json!({
            "cluster_id": p.cluster_id,
            "members": p.members,
            "height": m.height,
            "width": m.width,
            "method": m.method,
        });
        fs::write(&side, serde_json::to_string_pretty(&meta).unwrap()).map_err(|e| Error::io(&side, e))?;
        written.extend([pgm, raw, side]);
    }
    Ok(written)
}
