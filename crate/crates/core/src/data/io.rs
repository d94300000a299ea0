// Dataset directory layout:
//
//   dataset.csv    line 1: "#anchorda-dataset " + JSON manifest
//                  line 2: column header
//                  then one record per line:
//                  partner_id,user_id,day,label,categories,campaign_0,...
//                  where categories is a ';'-separated list of index:value
//                  pairs for the nonzero category slots.
//   profiles.json  partner profiles, in id order.
//
// Floats are written in Rust's shortest round-trip form, so reading back
// reproduces every value exactly.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, Day, GeneratorConfig, ImpressionRecord, PartnerProfile, GENERATOR_VERSION};
use crate::error::{Error, Result};

pub const DATASET_FILE: &str = "dataset.csv";
pub const PROFILES_FILE: &str = "profiles.json";
const MAGIC: &str = "#anchorda-dataset ";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    generator_version: u32,
    category_dim: usize,
    campaign_dim: usize,
    n_partners: usize,
    n_records: usize,
    seed: u64,
    generator: GeneratorConfig,
}

fn header(campaign_dim: usize) -> String {
    let mut h = String::from("partner_id,user_id,day,label,categories");
    for d in 0..campaign_dim {
        h.push_str(&format!(",campaign_{d}"));
    }
    h
}

pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = &dataset.config;
    let manifest = Manifest {
        generator_version: GENERATOR_VERSION,
        category_dim: cfg.category_dim,
        campaign_dim: cfg.campaign_dim,
        n_partners: dataset.profiles.len(),
        n_records: dataset.records.len(),
        seed: cfg.seed,
        generator: cfg.clone(),
    };
    let path = dir.join(DATASET_FILE);
    let io_err = |e| Error::io(&path, e);
    let mut w = BufWriter::new(File::create(&path).map_err(io_err)?);
    let mut write_all = || -> std::io::Result<()> {
        writeln!(w, "{MAGIC}{}", serde_json::to_string(&manifest).map_err(std::io::Error::other)?)?;
        writeln!(w, "{}", header(cfg.campaign_dim))?;
        for r in &dataset.records {
            write!(w, "{},{},{},{},", r.partner, r.user, r.day, r.label as u8)?;
            let mut first = true;
            for (c, v) in r.categories.iter().enumerate().filter(|(_, v)| **v != 0.0) {
                if !first {
                    w.write_all(b";")?;
                }
                write!(w, "{c}:{v}")?;
                first = false;
            }
            for v in &r.campaign {
                write!(w, ",{v}")?;
            }
            w.write_all(b"\n")?;
        }
        w.flush()
    };
    write_all().map_err(io_err)?;

    let path = dir.join(PROFILES_FILE);
    let mut text = serde_json::to_string_pretty(&dataset.profiles)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

struct LineParser<'a> {
    path: &'a Path,
    line: usize,
}

impl LineParser<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            message: message.into(),
        }
    }

    fn num<T: std::str::FromStr>(&self, field: &str, what: &str) -> Result<T> {
        field.parse().map_err(|_| self.err(format!("invalid {what} {field:?}")))
    }

    fn finite(&self, field: &str, what: &str) -> Result<f64> {
        let v: f64 = self.num(field, what)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(format!("non-finite {what} {field:?}")))
        }
    }

    fn record(&self, text: &str, m: &Manifest, profiles: &[PartnerProfile]) -> Result<ImpressionRecord> {
        let fields: Vec<&str> = text.split(',').collect();
        if fields.len() != 5 + m.campaign_dim {
            return Err(self.err(format!("expected {} fields, found {}", 5 + m.campaign_dim, fields.len())));
        }
        let partner: u32 = self.num(fields[0], "partner id")?;
        let profile = profiles
            .get(partner as usize)
            .ok_or_else(|| self.err(format!("unknown partner {partner}")))?;
        let user: u32 = self.num(fields[1], "user id")?;
        let day: Day = fields[2].parse().map_err(|_| self.err(format!("invalid day {:?}", fields[2])))?;
        let label = match fields[3] {
            "0" => false,
            "1" => true,
            other => return Err(self.err(format!("invalid label {other:?}"))),
        };
        let mut categories = vec![0.0; m.category_dim];
        let mut present = Vec::new();
        for pair in fields[4].split(';').filter(|p| !p.is_empty()) {
            let (idx, value) = pair
                .split_once(':')
                .ok_or_else(|| self.err(format!("category slot {pair:?} is not index:value")))?;
            let idx: usize = self.num(idx, "category index")?;
            if idx >= m.category_dim {
                return Err(self.err(format!("category index {idx} out of range")));
            }
            categories[idx] = self.finite(value, "category value")?;
            present.push(idx);
        }
        present.sort_unstable();
        if present != profile.categories {
            return Err(self.err(format!("category slots {present:?} differ from partner {partner}'s profile")));
        }
        let campaign = fields[5..]
            .iter()
            .map(|f| {
                let v = self.finite(f, "campaign value")?;
                if v < 0.0 {
                    Err(self.err(format!("negative campaign value {f}")))
                } else {
                    Ok(v)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ImpressionRecord {
            partner,
            user,
            day,
            categories,
            campaign,
            label,
        })
    }
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let profiles_path = dir.join(PROFILES_FILE);
    let text = fs::read_to_string(&profiles_path).map_err(|e| Error::io(&profiles_path, e))?;
    let profiles: Vec<PartnerProfile> = serde_json::from_str(&text)?;

    let path: PathBuf = dir.join(DATASET_FILE);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = BufReader::new(file).lines();
    let mut p = LineParser { path: &path, line: 1 };
    let mut next_line = |p: &LineParser| -> Result<Option<String>> {
        lines.next().transpose().map_err(|e| Error::io(p.path, e))
    };

    let first = next_line(&p)?.ok_or_else(|| p.err("missing manifest"))?;
    let json = first
        .strip_prefix(MAGIC)
        .ok_or_else(|| p.err("not a dataset file (bad manifest prefix)"))?;
    let m: Manifest = serde_json::from_str(json).map_err(|e| p.err(format!("bad manifest: {e}")))?;
    if m.generator_version != GENERATOR_VERSION {
        return Err(p.err(format!(
            "generator version {} unsupported (expected {GENERATOR_VERSION})",
            m.generator_version
        )));
    }
    if m.category_dim != m.generator.category_dim || m.campaign_dim != m.generator.campaign_dim {
        return Err(p.err("manifest dims disagree with the generator config"));
    }
    if m.n_partners != profiles.len() {
        return Err(p.err(format!(
            "manifest lists {} partners, {} has {}",
            m.n_partners,
            PROFILES_FILE,
            profiles.len()
        )));
    }
    if profiles.iter().enumerate().any(|(i, pr)| pr.id as usize != i) {
        return Err(Error::InvalidConfig(format!("{PROFILES_FILE} is not in id order")));
    }

    p.line = 2;
    let head = next_line(&p)?.ok_or_else(|| p.err("missing column header"))?;
    if head != header(m.campaign_dim) {
        return Err(p.err("unexpected column header"));
    }
    let mut records = Vec::with_capacity(m.n_records);
    loop {
        p.line += 1;
        let Some(text) = next_line(&p)? else { break };
        if records.len() == m.n_records {
            return Err(p.err(format!("more records than the {} in the manifest", m.n_records)));
        }
        records.push(p.record(&text, &m, &profiles)?);
    }
    if records.len() != m.n_records {
        return Err(p.err(format!(
            "manifest promises {} records, file has {}",
            m.n_records,
            records.len()
        )));
    }
    Ok(Dataset {
        config: m.generator,
        profiles,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate;

    fn small() -> Dataset {
        generate(&GeneratorConfig {
            n_partners: 12,
            n_users: 100,
            train_day_impressions: 2_000,
            eval_day_impressions: 300,
            seed: 9,
            ..GeneratorConfig::default()
        })
        .unwrap()
    }

    fn rewrite(dir: &Path, edit: impl FnOnce(&mut Vec<String>)) {
        let path = dir.join(DATASET_FILE);
        let mut lines: Vec<String> = fs::read_to_string(&path).unwrap().lines().map(String::from).collect();
        edit(&mut lines);
        fs::write(&path, lines.join("\n") + "\n").unwrap();
    }

    fn line_of(err: Error) -> usize {
        match err {
            Error::Parse { line, .. } => line,
            other => panic!("expected a parse error, got {other}"),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small();
        write_dataset(&ds, dir.path()).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn writing_twice_gives_identical_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_dataset(&small(), a.path()).unwrap();
        write_dataset(&small(), b.path()).unwrap();
        for f in [DATASET_FILE, PROFILES_FILE] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        }
    }

    #[test]
    fn count_mismatch_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&small(), dir.path()).unwrap();
        rewrite(dir.path(), |lines| {
            lines.pop();
        });
        assert!(matches!(read_dataset(dir.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn bad_field_reports_its_line() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&small(), dir.path()).unwrap();
        rewrite(dir.path(), |lines| {
            lines[6] = lines[6].replacen(",train,", ",monday,", 1);
        });
        assert_eq!(line_of(read_dataset(dir.path()).unwrap_err()), 7);
        write_dataset(&small(), dir.path()).unwrap();
        rewrite(dir.path(), |lines| {
            let fields: Vec<&str> = lines[3].split(',').collect();
            lines[3] = fields[..fields.len() - 1].join(",");
        });
        assert_eq!(line_of(read_dataset(dir.path()).unwrap_err()), 4);
    }

    #[test]
    fn empty_record_section_is_an_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = small();
        ds.records.clear();
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert!(back.records.is_empty());
        assert_eq!(back.profiles, ds.profiles);
    }

    #[test]
    fn missing_directory_is_an_io_error() {
        assert!(matches!(read_dataset("/nonexistent/anchorda"), Err(Error::Io { .. })));
    }
}
