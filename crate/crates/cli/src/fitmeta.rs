//! Fit metadata sidecar: everything needed to reinterpret a draws CSV
//! (model kind, index maps, missing-cell count), stored as a plain
//! key,value CSV next to the other artifacts.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use vaxcov_core::model::{ModelDims, ModelKind};
use vaxcov_core::preprocess::IndexMaps;

#[derive(Debug, Clone)]
pub struct FitMeta {
    pub label: String,
    pub model: ModelKind,
    pub maps: IndexMaps,
    pub n_missing: usize,
    pub seed: u64,
}

impl FitMeta {
    pub fn dims(&self) -> ModelDims {
        self.maps.dims()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w =
            csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(["key", "value"])?;
        let rows = [
            ("label", self.label.clone()),
            ("model", self.model.to_string()),
            ("countries", self.maps.countries.join(";")),
            ("vaccines", self.maps.vaccines.join(";")),
            ("year_start", self.maps.year_start.to_string()),
            ("n_times", self.maps.n_times.to_string()),
            ("n_missing", self.n_missing.to_string()),
            ("seed", self.seed.to_string()),
            (
                "region_map",
                self.maps
                    .region_of
                    .iter()
                    .map(|(c, r)| format!("{c}={r}"))
                    .collect::<Vec<_>>()
                    .join(";"),
            ),
        ];
        for (k, v) in rows {
            w.write_record([k, v.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<FitMeta> {
        let mut rdr =
            csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let mut kv = std::collections::BTreeMap::new();
        for row in rdr.records() {
            let row = row?;
            if row.len() >= 2 {
                kv.insert(row[0].to_string(), row[1].to_string());
            }
        }
        let get = |k: &str| -> Result<String> {
            kv.get(k)
                .cloned()
                .with_context(|| format!("{}: missing key '{k}'", path.display()))
        };
        let split = |s: String| -> Vec<String> {
            if s.is_empty() {
                Vec::new()
            } else {
                s.split(';').map(str::to_string).collect()
            }
        };
        let model_raw = get("model")?;
        let Some(model) = ModelKind::parse(&model_raw) else {
            bail!("{}: unknown model '{model_raw}'", path.display());
        };
        let region_of = split(get("region_map")?)
            .into_iter()
            .filter_map(|pair| {
                pair.split_once('=')
                    .map(|(c, r)| (c.to_string(), r.to_string()))
            })
            .collect();
        Ok(FitMeta {
            label: get("label")?,
            model,
            maps: IndexMaps {
                countries: split(get("countries")?),
                vaccines: split(get("vaccines")?),
                year_start: get("year_start")?.parse().context("bad year_start")?,
                n_times: get("n_times")?.parse().context("bad n_times")?,
                region_of,
            },
            n_missing: get("n_missing")?.parse().context("bad n_missing")?,
            seed: get("seed")?.parse().context("bad seed")?,
        })
    }
}

/// Fit labels present in a directory (via their `*_meta.csv` sidecars),
/// optionally restricted to one label.
pub fn discover(dir: &Path, label: Option<&str>) -> Result<Vec<PathBuf>> {
    let mut metas = Vec::new();
    let entries = std::fs::read_dir(dir)
        .with_context(|| format!("reading fit directory {}", dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(stem) = name.strip_suffix("_meta.csv") {
            if label.is_none_or(|l| l == stem) {
                metas.push(path);
            }
        }
    }
    metas.sort();
    if metas.is_empty() {
        bail!(
            "no fit artifacts found in {}{}",
            dir.display(),
            label
                .map(|l| format!(" for region {l}"))
                .unwrap_or_default()
        );
    }
    Ok(metas)
}
