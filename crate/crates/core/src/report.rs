//! Metric report serialization (CSV, JSON) and the models x metrics x
//! resolution summary table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::write_bytes;
use crate::metrics::{aggregate, MaskResolution, MetricRecord, MetricSummary};

/// Canonical row order for the summary table.
pub const MODEL_ROW_ORDER: [&str; 5] = [
    "gan_physics",
    "gan_no_physics",
    "handcrafted",
    "green_mask_dark",
    "green_mask_light",
];

pub fn records_to_csv(records: &[MetricRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["tile_id", "model_tag", "mask_resolution", "iou", "lpips", "fvps"])?;
    for r in records {
        w.write_record([
            r.tile_id.clone(),
            r.model_tag.clone(),
            r.mask_resolution.to_string(),
            format!("{}", r.iou),
            format!("{}", r.lpips),
            format!("{}", r.fvps),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn records_from_csv(text: &str) -> Result<Vec<MetricRecord>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.deserialize().map(|r| r.map_err(Into::into)).collect()
}

/// Groups records by `(model_tag, mask_resolution)` and aggregates each group.
pub fn summarize(records: &[MetricRecord]) -> Result<Vec<MetricSummary>> {
    let mut groups: BTreeMap<(usize, String, MaskResolution), Vec<MetricRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((row_rank(&r.model_tag), r.model_tag.clone(), r.mask_resolution))
            .or_default()
            .push(r.clone());
    }
    groups.values().map(|g| aggregate(g)).collect()
}

fn row_rank(tag: &str) -> usize {
    MODEL_ROW_ORDER
        .iter()
        .position(|t| *t == tag)
        .unwrap_or(MODEL_ROW_ORDER.len())
}

/// Records, summaries and the rendered table of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub records: Vec<MetricRecord>,
    pub summaries: Vec<MetricSummary>,
}

impl MetricReport {
    pub fn from_records(records: Vec<MetricRecord>) -> Result<Self> {
        let summaries = summarize(&records)?;
        Ok(Self { records, summaries })
    }

    /// Models as rows; LPIPS, IoU and FVPS each at high and low mask
    /// resolution as columns. Missing cells render as `-`.
    pub fn render_table(&self) -> String {
        let mut rows: Vec<&str> = Vec::new();
        for s in &self.summaries {
            if !rows.contains(&s.model_tag.as_str()) {
                rows.push(&s.model_tag);
            }
        }
        rows.sort_by_key(|t| row_rank(t));
        let cell = |tag: &str, res: MaskResolution, f: fn(&MetricSummary) -> f64| {
            self.summaries
                .iter()
                .find(|s| s.model_tag == tag && s.mask_resolution == res)
                .map_or_else(|| "-".to_string(), |s| format!("{:.3}", f(s)))
        };
        let header = [
            "model",
            "LPIPS high",
            "LPIPS low",
            "IoU high",
            "IoU low",
            "FVPS high",
            "FVPS low",
        ];
        let mut table = vec![header.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
        for tag in rows {
            table.push(vec![
                tag.to_string(),
                cell(tag, MaskResolution::High, |s| s.mean_lpips),
                cell(tag, MaskResolution::Low, |s| s.mean_lpips),
                cell(tag, MaskResolution::High, |s| s.mean_iou),
                cell(tag, MaskResolution::Low, |s| s.mean_iou),
                cell(tag, MaskResolution::High, |s| s.mean_fvps),
                cell(tag, MaskResolution::Low, |s| s.mean_fvps),
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in table.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, v)| format!("{v:<w$}", w = widths[c]))
                .collect();
            let _ = writeln!(out, "| {} |", line.join(" | "));
            if i == 0 {
                let sep: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
                let _ = writeln!(out, "|-{}-|", sep.join("-|-"));
            }
        }
        out
    }

    /// Writes `metrics.csv`, `metrics.json` and `table.md` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_bytes(&dir.join("metrics.csv"), records_to_csv(&self.records)?.as_bytes())?;
        write_bytes(&dir.join("metrics.json"), serde_json::to_string_pretty(self)?.as_bytes())?;
        write_bytes(&dir.join("table.md"), self.render_table().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::fvps;

    fn rec(tile: &str, tag: &str, res: MaskResolution, iou: f64, lpips: f64) -> MetricRecord {
        MetricRecord {
            tile_id: tile.into(),
            model_tag: tag.into(),
            mask_resolution: res,
            iou,
            lpips,
            fvps: fvps(iou, lpips, 1e-6).unwrap(),
        }
    }

    #[test]
    fn csv_roundtrip_and_columns() {
        let recs = vec![
            rec("a", "handcrafted", MaskResolution::High, 0.5, 0.25),
            rec("b", "handcrafted", MaskResolution::Low, 0.125, 0.75),
        ];
        let text = records_to_csv(&recs).unwrap();
        assert!(text.starts_with("tile_id,model_tag,mask_resolution,iou,lpips,fvps\n"));
        assert_eq!(records_from_csv(&text).unwrap(), recs);
    }

    #[test]
    fn table_rows_follow_canonical_order() {
        let recs = vec![
            rec("a", "handcrafted", MaskResolution::High, 0.4, 0.4),
            rec("a", "gan_no_physics", MaskResolution::High, 0.2, 0.3),
            rec("a", "gan_physics", MaskResolution::High, 0.5, 0.25),
            rec("a", "gan_physics", MaskResolution::Low, 0.3, 0.3),
        ];
        let report = MetricReport::from_records(recs).unwrap();
        let table = report.render_table();
        let rows: Vec<&str> = table
            .lines()
            .skip(2)
            .map(|l| l.trim_start_matches("| ").split(' ').next().unwrap())
            .collect();
        assert_eq!(rows, ["gan_physics", "gan_no_physics", "handcrafted"]);
        assert!(table.lines().nth(3).unwrap().contains(" - "));
        assert_eq!(report.summaries[0].model_tag, "gan_physics");
    }

    #[test]
    fn summaries_recompute_from_records() {
        let recs = vec![
            rec("a", "gan_physics", MaskResolution::High, 0.5, 0.25),
            rec("b", "gan_physics", MaskResolution::High, 0.7, 0.15),
        ];
        let report = MetricReport::from_records(recs.clone()).unwrap();
        assert_eq!(report.summaries, vec![aggregate(&recs).unwrap()]);
    }
}
