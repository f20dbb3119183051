//! Result tables, curve files and the markdown report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::training::TransferVariant;

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    /// Regime name; fine-tuning rows append `:e<epochs>`, transfer rows `:<variant>`.
    pub regime: String,
    pub language: String,
    pub fraction: f64,
    pub seed: u64,
    pub cer: f64,
    /// Share of emitted characters outside the scored language's charset.
    pub ooc_rate: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Results {
    pub rows: Vec<ResultRow>,
}

const CSV_HEADER: &str = "regime,language,fraction,seed,cer";
const OOC_HEADER: &str = "regime,language,fraction,seed,ooc_rate";

fn parse_row(line: &str, n: usize, file: &'static str) -> Result<(String, String, f64, u64, f64)> {
    let f: Vec<&str> = line.split(',').collect();
    let bad = || Error::format(file, format!("line {n}: {line:?}"));
    if f.len() != 5 {
        return Err(bad());
    }
    Ok((
        f[0].to_string(),
        f[1].to_string(),
        f[2].parse().map_err(|_| bad())?,
        f[3].parse().map_err(|_| bad())?,
        f[4].parse().map_err(|_| bad())?,
    ))
}

impl Results {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{}",
                r.regime, r.language, r.fraction, r.seed, r.cer
            )
            .unwrap();
        }
        s
    }

    pub fn ooc_csv(&self) -> String {
        let mut s = format!("{OOC_HEADER}\n");
        for r in &self.rows {
            if let Some(o) = r.ooc_rate {
                writeln!(
                    s,
                    "{},{},{},{},{o}",
                    r.regime, r.language, r.fraction, r.seed
                )
                .unwrap();
            }
        }
        s
    }

    pub fn from_csv(csv: &str, ooc: Option<&str>) -> Result<Self> {
        let mut lines = csv.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::format("results", "missing header"));
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let (regime, language, fraction, seed, cer) = parse_row(line, n + 2, "results")?;
            rows.push(ResultRow {
                regime,
                language,
                fraction,
                seed,
                cer,
                ooc_rate: None,
            });
        }
        if let Some(ooc) = ooc {
            let mut lines = ooc.lines();
            if lines.next() != Some(OOC_HEADER) {
                return Err(Error::format("results", "missing ooc header"));
            }
            for (n, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
                let (regime, language, fraction, seed, rate) = parse_row(line, n + 2, "results")?;
                if let Some(r) = rows.iter_mut().find(|r| {
                    r.regime == regime
                        && r.language == language
                        && r.fraction == fraction
                        && r.seed == seed
                }) {
                    r.ooc_rate = Some(rate);
                }
            }
        }
        Ok(Results { rows })
    }

    /// Mean CER over seeds per `(regime, language, fraction)`.
    pub fn mean_cer(&self) -> BTreeMap<(String, String, u64), (f64, f64)> {
        let mut acc: BTreeMap<(String, String, u64), Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            acc.entry((r.regime.clone(), r.language.clone(), r.fraction.to_bits()))
                .or_default()
                .push(r.cer);
        }
        acc.into_iter()
            .map(|((g, l, f), v)| {
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                ((g, l, f), (f64::from_bits(f), mean))
            })
            .collect()
    }

    pub fn mean_of(&self, regime: &str, language: &str, fraction: f64) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.regime == regime && r.language == language && r.fraction == fraction)
            .map(|r| r.cer)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// One block per (regime, language): `fraction mean_cer` lines, blocks
    /// separated by two blank lines.
    pub fn curves(&self) -> String {
        let mut blocks: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
        for ((g, l, _), (f, m)) in self.mean_cer() {
            blocks.entry((g, l)).or_default().push((f, m));
        }
        let mut s = String::new();
        for (i, ((g, l), mut pts)) in blocks.into_iter().enumerate() {
            if i > 0 {
                s.push_str("\n\n");
            }
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            writeln!(s, "# {g} {l}\n# fraction mean_cer").unwrap();
            for (f, m) in pts {
                writeln!(s, "{f} {m}").unwrap();
            }
        }
        s
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        for (name, text) in [
            ("results.csv", self.to_csv()),
            ("results_ooc.csv", self.ooc_csv()),
            ("curves.dat", self.curves()),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let p = dir.join("results.csv");
        let csv = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let ooc = std::fs::read_to_string(dir.join("results_ooc.csv")).ok();
        Self::from_csv(&csv, ooc.as_deref())
    }
}

fn pct(v: f64) -> String {
    format!("{v:.2}")
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Markdown report plus the CSV table. Sections without rows are left out.
/// `header` (for example the experiment settings) is quoted verbatim.
pub fn emit_report(results: &Results, header: Option<&str>) -> (String, String) {
    let mut md = String::from("# Synthetic experiment report\n\n");
    md.push_str("All numbers are %CER on synthetic mini-languages at desk scale.\n\n");
    if let Some(h) = header {
        md.push_str("## Settings\n\n```\n");
        md.push_str(h.trim_end());
        md.push_str("\n```\n\n");
    }
    let means = results.mean_cer();
    let mut fractions: Vec<f64> = results.rows.iter().map(|r| r.fraction).collect();
    fractions.sort_by(|a, b| a.total_cmp(b));
    fractions.dedup();

    let curve_regimes = ["mono-fbank", "mono-sbn", "multi"];
    let mut curve_rows: BTreeMap<(String, String), BTreeMap<u64, f64>> = BTreeMap::new();
    for ((g, l, f), (_, m)) in &means {
        if curve_regimes.contains(&g.as_str()) {
            curve_rows
                .entry((g.clone(), l.clone()))
                .or_default()
                .insert(*f, *m);
        }
    }
    if !curve_rows.is_empty() {
        md.push_str("## Training data fraction\n\n| regime | language |");
        for f in &fractions {
            write!(md, " {f} |").unwrap();
        }
        md.push_str("\n|---|---|");
        md.push_str(&"---|".repeat(fractions.len()));
        md.push('\n');
        for ((g, l), vals) in &curve_rows {
            write!(md, "| {g} | {l} |").unwrap();
            for f in &fractions {
                let cell = vals.get(&f.to_bits()).map_or("-".to_string(), |v| pct(*v));
                write!(md, " {cell} |").unwrap();
            }
            md.push('\n');
        }
        md.push('\n');
    }

    let mut feature_rows = Vec::new();
    for ((g, l), vals) in &curve_rows {
        if g == "mono-fbank" {
            if let Some(sbn) = curve_rows.get(&("mono-sbn".to_string(), l.clone())) {
                for f in &fractions {
                    if let (Some(a), Some(b)) = (vals.get(&f.to_bits()), sbn.get(&f.to_bits())) {
                        feature_rows.push((l.clone(), *f, *a, *b));
                    }
                }
            }
        }
    }
    if !feature_rows.is_empty() {
        md.push_str("## Features\n\n| language | fraction | fbank | SBN |\n|---|---|---|---|\n");
        for (l, f, a, b) in feature_rows {
            writeln!(md, "| {l} | {f} | {} | {} |", pct(a), pct(b)).unwrap();
        }
        md.push('\n');
    }

    let grouped = |pred: &dyn Fn(&str) -> bool| {
        let mut out: BTreeMap<(String, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for r in results.rows.iter().filter(|r| pred(&r.regime)) {
            let e = out
                .entry((r.regime.clone(), r.language.clone()))
                .or_default();
            e.0.push(r.cer);
            if let Some(o) = r.ooc_rate {
                e.1.push(o);
            }
        }
        out
    };

    let ft = grouped(&|g: &str| g.starts_with("multi-finetune"));
    if !ft.is_empty() {
        let multi = grouped(&|g: &str| g == "multi");
        md.push_str(
            "## Fine-tuning\n\n| model | language | CER | out-of-charset % |\n|---|---|---|---|\n",
        );
        let targets: Vec<String> = ft.keys().map(|(_, l)| l.clone()).collect();
        for ((g, l), (c, o)) in multi
            .iter()
            .filter(|((_, l), _)| targets.contains(l))
            .chain(ft.iter())
        {
            let ooc = if o.is_empty() {
                "-".into()
            } else {
                pct(100.0 * mean(o))
            };
            writeln!(md, "| {g} | {l} | {} | {ooc} |", pct(mean(c))).unwrap();
        }
        md.push('\n');
    }

    let tr = grouped(&|g: &str| g.starts_with("transfer:"));
    if !tr.is_empty() {
        md.push_str("## Language transfer\n\n| retrained | language | CER |\n|---|---|---|\n");
        for v in TransferVariant::ALL {
            for ((g, l), (c, _)) in &tr {
                if g.strip_prefix("transfer:") == Some(&v.to_string()) {
                    writeln!(md, "| {v} | {l} | {} |", pct(mean(c))).unwrap();
                }
            }
        }
        md.push('\n');
    }
    (md, results.to_csv())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(regime: &str, fraction: f64, seed: u64, cer: f64) -> ResultRow {
        ResultRow {
            regime: regime.into(),
            language: "alpha".into(),
            fraction,
            seed,
            cer,
            ooc_rate: Some(0.0),
        }
    }

    #[test]
    fn csv_round_trip_and_schema() {
        let r = Results {
            rows: vec![
                row("mono-fbank", 0.1, 1, 12.5),
                row("transfer:Att+Out", 1.0, 2, 3.0),
            ],
        };
        let csv = r.to_csv();
        assert!(csv.starts_with("regime,language,fraction,seed,cer\n"));
        assert_eq!(Results::from_csv(&csv, Some(&r.ooc_csv())).unwrap(), r);
    }

    #[test]
    fn empty_sections_are_omitted_and_output_is_stable() {
        let r = Results {
            rows: vec![
                row("mono-fbank", 0.1, 1, 10.0),
                row("mono-fbank", 0.1, 2, 20.0),
            ],
        };
        let (md, _) = emit_report(&r, None);
        assert!(md.contains("| mono-fbank | alpha | 15.00 |"));
        assert!(
            !md.contains("Fine-tuning")
                && !md.contains("Language transfer")
                && !md.contains("## Features")
        );
        assert_eq!(emit_report(&r, None), emit_report(&r, None));
    }

    #[test]
    fn transfer_rows_follow_variant_order() {
        let rows = [
            "transfer:Att+CTC+Out",
            "transfer:Out",
            "transfer:CTC+Out",
            "transfer:Att+Out",
        ]
        .iter()
        .map(|g| row(g, 1.0, 1, 5.0))
        .collect();
        let (md, _) = emit_report(&Results { rows }, Some("seeds=1"));
        let order: Vec<usize> = ["| Out |", "| Att+Out |", "| CTC+Out |", "| Att+CTC+Out |"]
            .iter()
            .map(|s| md.find(s).unwrap())
            .collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
        assert!(md.contains("seeds=1"));
    }
}
