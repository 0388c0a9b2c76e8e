//! `CRF1` model files: little-endian header, tag set, unit lexicon, then the
//! weight arrays.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::bundle::TaggerBundle;
use super::crf::{CrfModel, TagSet};
use super::{Result, TaggerError};
use crate::corpus::SpanLabel;

const MAGIC: &[u8; 4] = b"CRF1";
const VERSION: u32 = 1;
/// File names inside a bundle directory, in claim, experience, question, PIO order.
pub const BUNDLE_FILES: [&str; 4] = ["claim.crf", "experience.crf", "question.crf", "pio.crf"];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TaggerError + '_ {
    move |source| TaggerError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn put_f64s<W: Write>(w: &mut W, xs: &[f64]) -> std::io::Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_crf<W: Write>(w: &mut W, model: &CrfModel) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(model.bucket_count as u64).to_le_bytes())?;
    let kinds = model.tag_set.kinds();
    w.write_all(&(kinds.len() as u32).to_le_bytes())?;
    for k in kinds {
        let idx = SpanLabel::ALL.iter().position(|l| l == k).expect("known label");
        w.write_all(&[idx as u8])?;
    }
    w.write_all(&(model.units.len() as u32).to_le_bytes())?;
    for u in &model.units {
        w.write_all(&(u.len() as u32).to_le_bytes())?;
        w.write_all(u.as_bytes())?;
    }
    w.write_all(&model.l2.to_le_bytes())?;
    put_f64s(w, &model.start)?;
    put_f64s(w, &model.end)?;
    put_f64s(w, &model.transition)?;
    put_f64s(w, &model.unary)
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| TaggerError::InvalidModel(format!("truncated model file: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn read_crf<R: Read>(r: R) -> Result<CrfModel> {
    let mut r = Reader { inner: r };
    if &r.bytes::<4>()? != MAGIC {
        return Err(TaggerError::InvalidModel("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(TaggerError::InvalidModel(format!("unsupported version {version}")));
    }
    let bucket_count = r.u64()? as usize;
    if !bucket_count.is_power_of_two() || bucket_count > 1 << 28 {
        return Err(TaggerError::InvalidModel(format!("bad bucket count {bucket_count}")));
    }
    let n_kinds = r.u32()? as usize;
    if n_kinds == 0 || n_kinds > SpanLabel::ALL.len() {
        return Err(TaggerError::InvalidModel(format!("bad tag set size {n_kinds}")));
    }
    let mut kinds = Vec::with_capacity(n_kinds);
    for _ in 0..n_kinds {
        let [idx] = r.bytes::<1>()?;
        let label = SpanLabel::ALL
            .get(idx as usize)
            .ok_or_else(|| TaggerError::InvalidModel(format!("unknown label index {idx}")))?;
        kinds.push(*label);
    }
    let n_units = r.u32()? as usize;
    let mut units = Vec::new();
    for _ in 0..n_units {
        let len = r.u32()? as usize;
        if len > 1024 {
            return Err(TaggerError::InvalidModel("unit string too long".into()));
        }
        let mut buf = vec![0u8; len];
        r.inner
            .read_exact(&mut buf)
            .map_err(|e| TaggerError::InvalidModel(format!("truncated model file: {e}")))?;
        units.push(String::from_utf8(buf).map_err(|_| TaggerError::InvalidModel("unit is not UTF-8".into()))?);
    }
    let l2 = r.f64()?;
    let tag_set = TagSet::new(kinds);
    let k = tag_set.len();
    let model = CrfModel {
        start: r.f64s(k)?,
        end: r.f64s(k)?,
        transition: r.f64s(k * k)?,
        unary: r.f64s(bucket_count * k)?,
        tag_set,
        bucket_count,
        l2,
        units,
    };
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest).unwrap_or(0) != 0 {
        return Err(TaggerError::InvalidModel("trailing bytes".into()));
    }
    if !model.all_finite() {
        return Err(TaggerError::InvalidModel("non-finite weight".into()));
    }
    Ok(model)
}

pub fn save_crf(path: impl AsRef<Path>, model: &CrfModel) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write_crf(&mut w, model).and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn load_crf(path: impl AsRef<Path>) -> Result<CrfModel> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_crf(BufReader::new(file))
}

/// Writes the four models into `dir`, creating it if needed.
pub fn save_bundle(dir: impl AsRef<Path>, bundle: &TaggerBundle) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let models = [&bundle.claim, &bundle.experience, &bundle.question, &bundle.pio];
    for (name, model) in BUNDLE_FILES.iter().zip(models) {
        save_crf(dir.join(name), model)?;
    }
    Ok(())
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<TaggerBundle> {
    let dir = dir.as_ref();
    let [claim, experience, question, pio] = BUNDLE_FILES.map(|name| load_crf(dir.join(name)));
    let bundle = TaggerBundle {
        claim: claim?,
        experience: experience?,
        question: question?,
        pio: pio?,
    };
    let expected = [
        (&bundle.claim, TagSet::binary(SpanLabel::Claim)),
        (&bundle.experience, TagSet::binary(SpanLabel::Experience)),
        (&bundle.question, TagSet::binary(SpanLabel::Question)),
        (&bundle.pio, TagSet::pio()),
    ];
    for (model, tag_set) in expected {
        if model.tag_set != tag_set
            || model.bucket_count != bundle.claim.bucket_count
            || model.units != bundle.claim.units
        {
            return Err(TaggerError::InvalidModel(format!(
                "inconsistent bundle in {}",
                dir.display()
            )));
        }
    }
    Ok(bundle)
}
