use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{generate_phantom, random_pores, DefectRecord, DegradationSpec, PartShape, PhantomSpec, PorePopulation, PoreSpec};
use crate::error::{io_err, json_err};
use crate::volume::{data_path, Volume};
use crate::{seeds, Error, Result};

const FORMAT: &str = "volsr-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Per-part phantom settings; pores come from `pores` unless `defects` lists
/// them explicitly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomTemplate {
    pub dims: [usize; 3],
    #[serde(default = "default_voxel")]
    pub voxel_size_um: f64,
    pub part_shape: PartShape,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_material")]
    pub material_intensity: f32,
    #[serde(default = "default_background")]
    pub background_intensity: f32,
    #[serde(default)]
    pub pores: PorePopulation,
    #[serde(default)]
    pub defects: Option<Vec<PoreSpec>>,
}

fn default_voxel() -> f64 {
    17.28
}
fn default_margin() -> f64 {
    6.0
}
fn default_material() -> f32 {
    0.8
}
fn default_background() -> f32 {
    0.1
}

impl PhantomTemplate {
    pub fn new(dims: [usize; 3], part_shape: PartShape) -> Self {
        Self {
            dims,
            voxel_size_um: default_voxel(),
            part_shape,
            margin: default_margin(),
            material_intensity: default_material(),
            background_intensity: default_background(),
            pores: PorePopulation::default(),
            defects: None,
        }
    }

    /// Concrete phantom for one part.
    pub fn instantiate(&self, seed: u64) -> Result<PhantomSpec> {
        let mut spec = PhantomSpec {
            dims: self.dims,
            voxel_size_um: self.voxel_size_um,
            part_shape: self.part_shape,
            margin: self.margin,
            material_intensity: self.material_intensity,
            background_intensity: self.background_intensity,
            defects: Vec::new(),
            seed,
        };
        spec.defects = match &self.defects {
            Some(d) => d.clone(),
            None => random_pores(&spec, &self.pores, seeds::derive(seed, "pores"))?,
        };
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    pub n_train_parts: usize,
    pub n_test_parts: usize,
    pub phantom: PhantomTemplate,
    /// The `seed` field is replaced by a per-part seed.
    pub degradation: DegradationSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub phantom: PhantomSpec,
    pub degradation: DegradationSpec,
    /// Paths relative to the manifest directory.
    pub hr: String,
    pub lr: String,
    pub defects: String,
    /// SHA-256 of every written file, keyed by relative path.
    pub sha256: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub config: DatasetConfig,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    root: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut m: Manifest = serde_json::from_str(&text).map_err(json_err(path))?;
        if m.format != FORMAT {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("expected format {FORMAT}, found {}", m.format),
            });
        }
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn load_pair(&self, entry: &ManifestEntry) -> Result<(Volume, Volume)> {
        Ok((Volume::load(&self.resolve(&entry.lr))?, Volume::load(&self.resolve(&entry.hr))?))
    }

    pub fn load_defects(&self, entry: &ManifestEntry) -> Result<Vec<DefectRecord>> {
        load_defects(&self.resolve(&entry.defects))
    }
}

pub fn load_defects(path: &Path) -> Result<Vec<DefectRecord>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(seeds::sha256_hex(&fs::read(path).map_err(io_err(path))?))
}

/// Generate, degrade and write every part, then the manifest.
pub fn make_dataset(cfg: &DatasetConfig, out_dir: &Path, overwrite: bool) -> Result<Manifest> {
    let manifest_path = out_dir.join(MANIFEST_FILE);
    if manifest_path.exists() && !overwrite {
        return Err(Error::Exists(manifest_path));
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut entries = Vec::new();
    for i in 0..cfg.n_train_parts + cfg.n_test_parts {
        let id = format!("part-{i:03}");
        let split = if i < cfg.n_train_parts { Split::Train } else { Split::Test };
        let phantom = cfg.phantom.instantiate(seeds::derive(cfg.seed, &format!("phantom/{i}")))?;
        let degradation = DegradationSpec {
            seed: seeds::derive(cfg.seed, &format!("degrade/{i}")),
            ..cfg.degradation
        };
        let (hr, records) = generate_phantom(&phantom)?;
        let lr = super::degrade(&hr, &degradation)?;
        let (hr_rel, lr_rel, def_rel) = (format!("{id}.hr.json"), format!("{id}.lr.json"), format!("{id}.defects.json"));
        hr.with_meta("part", id.as_str()).save(&out_dir.join(&hr_rel))?;
        lr.with_meta("part", id.as_str()).save(&out_dir.join(&lr_rel))?;
        let def_path = out_dir.join(&def_rel);
        let text = serde_json::to_string_pretty(&records).expect("records serialize");
        fs::write(&def_path, text).map_err(io_err(&def_path))?;

        let mut sha256 = BTreeMap::new();
        for rel in [&hr_rel, &lr_rel] {
            let header = out_dir.join(rel);
            sha256.insert(rel.clone(), file_digest(&header)?);
            let raw = data_path(&header);
            let raw_rel = raw.file_name().and_then(|n| n.to_str()).expect("utf-8 name").to_string();
            sha256.insert(raw_rel, file_digest(&raw)?);
        }
        sha256.insert(def_rel.clone(), file_digest(&def_path)?);
        log::info!("{id}: {} pores, split {split:?}", records.len());
        entries.push(ManifestEntry {
            id,
            split,
            phantom,
            degradation,
            hr: hr_rel,
            lr: lr_rel,
            defects: def_rel,
            sha256,
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        config: cfg.clone(),
        entries,
        root: out_dir.to_path_buf(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
    Ok(manifest)
}
