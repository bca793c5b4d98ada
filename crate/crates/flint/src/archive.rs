//! On-disk ensemble archives.
//!
//! Layout: `<root>/manifest.json` plus one raw file per field instance at
//! `<root>/<member_id>/<field>/t<6-digit index>.raw`. Raw payloads are
//! little-endian f32, row-major, channels-first for flow fields, so round
//! trips are bit-exact. Archives have a single writer (guarded by a lock
//! file) and any number of concurrent readers.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{FlintError, Result};
use crate::field::{FlowField, ScalarField};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldSpec {
    pub dtype: String,
    pub channels: usize,
    /// Number of trailing timesteps (relative to the member count) for which
    /// this field has no file. Used by prediction archives whose flow output
    /// stops one frame short of the density output.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub trim_end: usize,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MemberEntry {
    pub id: String,
    pub timesteps: usize,
    #[serde(default)]
    pub params: serde_json::Value,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub dims: usize,
    /// Spatial sizes, slowest-varying first.
    pub shape: Vec<usize>,
    pub fields: BTreeMap<String, FieldSpec>,
    pub members: Vec<MemberEntry>,
    /// Per-field `[min, max]` over the data the generator produced.
    pub normalization: BTreeMap<String, [f32; 2]>,
    pub seed: u64,
}

impl Manifest {
    pub fn cells(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(FlintError::VersionMismatch {
                found: self.version,
                expected: MANIFEST_VERSION,
            });
        }
        if !(self.dims == 2 || self.dims == 3) {
            return Err(FlintError::Manifest(format!("dims must be 2 or 3, got {}", self.dims)));
        }
        if self.shape.len() != self.dims {
            return Err(FlintError::Manifest(format!(
                "shape {:?} does not match dims {}",
                self.shape, self.dims
            )));
        }
        if self.shape.iter().any(|&s| s == 0) {
            return Err(FlintError::Manifest("zero-sized spatial axis".into()));
        }
        for (name, spec) in &self.fields {
            if spec.dtype != "f32" {
                return Err(FlintError::Manifest(format!(
                    "field {name}: unsupported dtype {}",
                    spec.dtype
                )));
            }
            if spec.channels != 1 && spec.channels != self.dims {
                return Err(FlintError::Manifest(format!(
                    "field {name}: channels {} must be 1 or dims {}",
                    spec.channels, self.dims
                )));
            }
        }
        for (name, [lo, hi]) in &self.normalization {
            if lo >= hi || !lo.is_finite() || !hi.is_finite() {
                return Err(FlintError::Manifest(format!(
                    "normalization for {name}: min {lo} must be < max {hi}"
                )));
            }
        }
        let mut seen = HashSet::new();
        for m in &self.members {
            if !seen.insert(&m.id) {
                return Err(FlintError::Manifest(format!("duplicate member id {}", m.id)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EnsembleArchive {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl EnsembleArchive {
    /// Open and fully validate an archive: manifest schema plus existence
    /// and exact size of every declared raw file.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let mpath = root.join("manifest.json");
        if !mpath.is_file() {
            return Err(FlintError::MissingFile(mpath));
        }
        let manifest: Manifest = serde_json::from_reader(fs::File::open(&mpath)?)?;
        manifest.validate()?;
        let archive = EnsembleArchive { root, manifest };
        archive.check_files()?;
        Ok(archive)
    }

    fn check_files(&self) -> Result<()> {
        let cells = self.manifest.cells();
        for m in &self.manifest.members {
            for (fname, spec) in &self.manifest.fields {
                let steps = m.timesteps.saturating_sub(spec.trim_end);
                let expected = (cells * spec.channels * 4) as u64;
                for t in 0..steps {
                    let p = self.field_path(&m.id, fname, t);
                    let meta = fs::metadata(&p).map_err(|_| FlintError::MissingFile(p.clone()))?;
                    if meta.len() != expected {
                        return Err(FlintError::ShapeMismatch(format!(
                            "{}: {} bytes on disk, manifest implies {}",
                            p.display(),
                            meta.len(),
                            expected
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn field_path(&self, member: &str, field: &str, t: usize) -> PathBuf {
        self.root.join(member).join(field).join(format!("t{t:06}.raw"))
    }

    pub fn member(&self, id: &str) -> Option<&MemberEntry> {
        self.manifest.members.iter().find(|m| m.id == id)
    }

    pub fn has_field(&self, name: &str) -> bool {
        self.manifest.fields.contains_key(name)
    }

    /// Timesteps available for `field` within `member`.
    pub fn field_timesteps(&self, member: &str, field: &str) -> Result<usize> {
        let m = self
            .member(member)
            .ok_or_else(|| FlintError::Manifest(format!("unknown member {member}")))?;
        let spec = self
            .manifest
            .fields
            .get(field)
            .ok_or_else(|| FlintError::Manifest(format!("unknown field {field}")))?;
        Ok(m.timesteps.saturating_sub(spec.trim_end))
    }

    fn read_raw(&self, member: &str, field: &str, t: usize, channels: usize) -> Result<Vec<f32>> {
        let spec = self
            .manifest
            .fields
            .get(field)
            .ok_or_else(|| FlintError::Manifest(format!("unknown field {field}")))?;
        if spec.channels != channels {
            return Err(FlintError::ShapeMismatch(format!(
                "field {field} has {} channels, requested {}",
                spec.channels, channels
            )));
        }
        let path = self.field_path(member, field, t);
        let mut bytes = Vec::new();
        fs::File::open(&path)
            .map_err(|_| FlintError::MissingFile(path.clone()))?
            .read_to_end(&mut bytes)?;
        let expected = self.manifest.cells() * channels * 4;
        if bytes.len() != expected {
            return Err(FlintError::ShapeMismatch(format!(
                "{}: {} bytes, expected {}",
                path.display(),
                bytes.len(),
                expected
            )));
        }
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn load_scalar(&self, member: &str, field: &str, t: usize) -> Result<ScalarField> {
        let data = self.read_raw(member, field, t, 1)?;
        let mut f = ScalarField::new(self.manifest.shape.clone(), data);
        f.member_id = member.to_string();
        f.time_index = t;
        Ok(f)
    }

    pub fn load_flow(&self, member: &str, field: &str, t: usize) -> Result<FlowField> {
        let data = self.read_raw(member, field, t, self.manifest.dims)?;
        let mut f = FlowField::new(self.manifest.shape.clone(), data);
        f.member_id = member.to_string();
        f.time_index = t;
        Ok(f)
    }

    /// Normalization range for a field, as recorded in the manifest.
    pub fn norm_range(&self, field: &str) -> Option<(f32, f32)> {
        self.manifest.normalization.get(field).map(|r| (r[0], r[1]))
    }
}

/// Exclusive writer for a new archive. Holds a lock file for the lifetime of
/// the writer; a second concurrent writer on the same root fails.
pub struct ArchiveWriter {
    root: PathBuf,
    manifest: Manifest,
    written: HashSet<(String, String, usize)>,
    lock_path: PathBuf,
}

impl ArchiveWriter {
    pub fn create(root: impl AsRef<Path>, manifest: Manifest, overwrite: bool) -> Result<Self> {
        manifest.validate()?;
        let root = root.as_ref().to_path_buf();
        let mpath = root.join("manifest.json");
        if mpath.exists() && !overwrite {
            return Err(FlintError::Conflict(format!(
                "archive already exists at {} (pass overwrite to replace)",
                root.display()
            )));
        }
        fs::create_dir_all(&root)?;
        let lock_path = root.join(".lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock_path)
        {
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(FlintError::Conflict(format!(
                    "archive {} is locked by another writer",
                    root.display()
                )));
            }
            Err(e) => return Err(e.into()),
        }
        let writer = ArchiveWriter {
            root,
            manifest,
            written: HashSet::new(),
            lock_path,
        };
        writer.write_manifest()?;
        Ok(writer)
    }

    fn write_manifest(&self) -> Result<()> {
        let tmp = self.root.join("manifest.json.tmp");
        let mut f = fs::File::create(&tmp)?;
        serde_json::to_writer_pretty(&mut f, &self.manifest)?;
        f.flush()?;
        fs::rename(&tmp, self.root.join("manifest.json"))?;
        Ok(())
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn manifest_mut(&mut self) -> &mut Manifest {
        &mut self.manifest
    }

    /// Write one raw field instance. Shape is checked against the manifest;
    /// writing the same (member, field, t) twice is a conflict.
    pub fn write_raw(&mut self, member: &str, field: &str, t: usize, data: &[f32]) -> Result<()> {
        let spec = self
            .manifest
            .fields
            .get(field)
            .ok_or_else(|| FlintError::Manifest(format!("unknown field {field}")))?;
        let expected = self.manifest.cells() * spec.channels;
        if data.len() != expected {
            return Err(FlintError::ShapeMismatch(format!(
                "write {member}/{field}/t{t}: {} values, manifest implies {}",
                data.len(),
                expected
            )));
        }
        let key = (member.to_string(), field.to_string(), t);
        if !self.written.insert(key) {
            return Err(FlintError::Conflict(format!(
                "duplicate write of {member}/{field}/t{t:06}"
            )));
        }
        let dir = self.root.join(member).join(field);
        fs::create_dir_all(&dir)?;
        let mut out = std::io::BufWriter::new(fs::File::create(dir.join(format!("t{t:06}.raw")))?);
        for v in data {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_scalar(&mut self, field: &str, f: &ScalarField) -> Result<()> {
        if f.shape != self.manifest.shape {
            return Err(FlintError::ShapeMismatch(format!(
                "scalar shape {:?} vs manifest {:?}",
                f.shape, self.manifest.shape
            )));
        }
        self.write_raw(&f.member_id.clone(), field, f.time_index, &f.data)
    }

    pub fn write_flow(&mut self, field: &str, f: &FlowField) -> Result<()> {
        if f.shape != self.manifest.shape {
            return Err(FlintError::ShapeMismatch(format!(
                "flow shape {:?} vs manifest {:?}",
                f.shape, self.manifest.shape
            )));
        }
        self.write_raw(&f.member_id.clone(), field, f.time_index, &f.data)
    }

    /// Flush the manifest (with any mutations) and release the writer lock.
    pub fn finish(self) -> Result<EnsembleArchive> {
        self.write_manifest()?;
        let root = self.root.clone();
        drop(self); // releases the lock file
        EnsembleArchive::open(root)
    }
}

impl Drop for ArchiveWriter {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock_path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn manifest_2d(members: usize, timesteps: usize, with_flow: bool) -> Manifest {
        let mut fields = BTreeMap::new();
        fields.insert(
            "density".to_string(),
            FieldSpec {
                dtype: "f32".into(),
                channels: 1,
                trim_end: 0,
            },
        );
        if with_flow {
            fields.insert(
                "flow".to_string(),
                FieldSpec {
                    dtype: "f32".into(),
                    channels: 2,
                    trim_end: 0,
                },
            );
        }
        let mut normalization = BTreeMap::new();
        normalization.insert("density".to_string(), [0.0, 1.0]);
        if with_flow {
            normalization.insert("flow".to_string(), [-1.0, 1.0]);
        }
        Manifest {
            version: 1,
            dims: 2,
            shape: vec![100, 400],
            fields,
            members: (0..members)
                .map(|i| MemberEntry {
                    id: format!("m{i:03}"),
                    timesteps,
                    params: serde_json::json!({}),
                })
                .collect(),
            normalization,
            seed: 7,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempdir("roundtrip");
        let mut r = StdRng::seed_from_u64(1);
        let data: Vec<f32> = (0..100 * 400).map(|_| r.random_range(-10.0..10.0)).collect();
        let mut manifest = manifest_2d(1, 1, false);
        manifest.normalization.insert("density".into(), [-10.0, 10.0]);
        let mut w = ArchiveWriter::create(&dir, manifest, false).unwrap();
        w.write_raw("m000", "density", 0, &data).unwrap();
        let archive = w.finish().unwrap();
        let f = archive.load_scalar("m000", "density", 0).unwrap();
        assert_eq!(f.data, data, "byte-identical round trip");
    }

    #[test]
    fn member_count_matches_manifest() {
        let dir = tempdir("count");
        let mut w = ArchiveWriter::create(&dir, manifest_2d(1, 10, false), false).unwrap();
        let zeros = vec![0.0f32; 100 * 400];
        for t in 0..10 {
            w.write_raw("m000", "density", t, &zeros).unwrap();
        }
        let archive = w.finish().unwrap();
        let steps = archive.field_timesteps("m000", "density").unwrap();
        assert_eq!(steps, 10);
        for t in 0..steps {
            assert!(archive.load_scalar("m000", "density", t).is_ok());
        }
    }

    #[test]
    fn flow_channel_dims_mismatch_rejected() {
        let mut m = manifest_2d(1, 1, true);
        m.dims = 3;
        m.shape = vec![8, 8, 8];
        // density channels 1 ok, flow channels 2 != dims 3
        assert!(matches!(m.validate(), Err(FlintError::Manifest(_))));
    }

    #[test]
    fn file_size_3d_flow() {
        let dir = tempdir("size3d");
        let mut fields = BTreeMap::new();
        fields.insert(
            "flow".to_string(),
            FieldSpec {
                dtype: "f32".into(),
                channels: 3,
                trim_end: 0,
            },
        );
        let mut normalization = BTreeMap::new();
        normalization.insert("flow".to_string(), [-1.0, 1.0]);
        let manifest = Manifest {
            version: 1,
            dims: 3,
            shape: vec![32, 32, 32],
            fields,
            members: vec![MemberEntry {
                id: "m".into(),
                timesteps: 1,
                params: serde_json::Value::Null,
            }],
            normalization,
            seed: 0,
        };
        let mut w = ArchiveWriter::create(&dir, manifest, false).unwrap();
        w.write_raw("m", "flow", 0, &vec![0.5f32; 3 * 32 * 32 * 32]).unwrap();
        let archive = w.finish().unwrap();
        let path = archive.field_path("m", "flow", 0);
        assert_eq!(fs::metadata(path).unwrap().len(), 3 * 32 * 32 * 32 * 4);
    }

    #[test]
    fn double_write_conflicts() {
        let dir = tempdir("dup");
        let mut w = ArchiveWriter::create(&dir, manifest_2d(1, 1, false), false).unwrap();
        let zeros = vec![0.0f32; 100 * 400];
        w.write_raw("m000", "density", 0, &zeros).unwrap();
        assert!(matches!(
            w.write_raw("m000", "density", 0, &zeros),
            Err(FlintError::Conflict(_))
        ));
    }

    #[test]
    fn second_writer_conflicts() {
        let dir = tempdir("lock");
        let _w1 = ArchiveWriter::create(&dir, manifest_2d(1, 1, false), false).unwrap();
        assert!(matches!(
            ArchiveWriter::create(&dir, manifest_2d(1, 1, false), true),
            Err(FlintError::Conflict(_))
        ));
    }

    #[test]
    fn version_and_missing_file_errors() {
        let dir = tempdir("vers");
        let mut manifest = manifest_2d(1, 1, false);
        manifest.version = 2;
        assert!(matches!(
            manifest.validate(),
            Err(FlintError::VersionMismatch { found: 2, .. })
        ));
        // declared but absent file
        let manifest = manifest_2d(1, 1, false);
        fs::create_dir_all(&dir).unwrap();
        serde_json::to_writer(
            fs::File::create(dir.join("manifest.json")).unwrap(),
            &manifest,
        )
        .unwrap();
        assert!(matches!(
            EnsembleArchive::open(&dir),
            Err(FlintError::MissingFile(_))
        ));
    }

    #[test]
    fn shape_mismatch_on_write() {
        let dir = tempdir("badshape");
        let mut w = ArchiveWriter::create(&dir, manifest_2d(1, 1, false), false).unwrap();
        assert!(matches!(
            w.write_raw("m000", "density", 0, &[0.0; 7]),
            Err(FlintError::ShapeMismatch(_))
        ));
    }

    fn tempdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "flint-archive-{}-{}-{}",
            tag,
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        let _ = fs::remove_dir_all(&dir);
        dir
    }
}
