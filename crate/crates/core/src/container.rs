//! Little-endian binary containers shared by dataset, checkpoint and model
//! files.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::Tensor;

#[derive(Default)]
pub struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, v: &[f32]) {
        self.buf.reserve(v.len() * 4);
        for x in v {
            self.bytes(&x.to_le_bytes());
        }
    }

    /// u16 length, then UTF-8.
    pub fn short_str(&mut self, s: &str) -> Result<()> {
        let n = u16::try_from(s.len()).map_err(|_| Error::Format(format!("string of {} bytes too long", s.len())))?;
        self.u16(n);
        self.bytes(s.as_bytes());
        Ok(())
    }

    /// u32 length, then the bytes.
    pub fn blob(&mut self, b: &[u8]) -> Result<()> {
        let n = u32::try_from(b.len()).map_err(|_| Error::Format("blob too long".into()))?;
        self.u32(n);
        self.bytes(b);
        Ok(())
    }

    /// count u32, then per tensor: name (u16 + UTF-8), rank u8, extents u32,
    /// f32 data.
    pub fn tensor_table(&mut self, params: &ParamSet) -> Result<()> {
        self.u32(params.len() as u32);
        for (name, t) in params.iter() {
            self.short_str(name)?;
            self.u8(t.dims().len() as u8);
            for &d in t.dims() {
                let d = u32::try_from(d).map_err(|_| Error::Format(format!("extent {d} of `{name}`")))?;
                self.u32(d);
            }
            self.f32s(t.data());
        }
        Ok(())
    }
}

pub struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        ByteReader { data, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format(format!(
                "truncated: wanted {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn expect_magic(&mut self, magic: &[u8], what: &str) -> Result<()> {
        let got = self.take(magic.len()).map_err(|_| Error::Format(format!("not a {what} file")))?;
        if got != magic {
            return Err(Error::Format(format!("not a {what} file (bad magic)")));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn short_str(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8".into()))
    }

    pub fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub fn tensor_table(&mut self, trainable: impl Fn(&str) -> bool) -> Result<ParamSet> {
        let count = self.u32()?;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let name = self.short_str()?;
            let rank = self.u8()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(self.u32()? as usize);
            }
            let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.filter(|&n| n > 0).ok_or_else(|| Error::Format(format!("bad extents for `{name}`")))?;
            let data = self.f32s(n)?;
            let t = Tensor::from_vec(dims, data).map_err(|e| Error::Format(e.to_string()))?;
            let train = trainable(&name);
            params.insert(name, t, train);
        }
        Ok(params)
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

/// Write via a sibling temporary file and rename, so readers never observe a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Parameter names that are never learned.
pub fn is_running_stat(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_round_trip() {
        let mut p = ParamSet::new();
        p.insert("a.weight", Tensor::from_vec([2, 2], vec![1.0, -2.5, f32::MIN_POSITIVE, 3.0]).unwrap(), true);
        p.insert("a.bn.running_var", Tensor::from_vec([1], vec![0.25]).unwrap(), false);
        let mut w = ByteWriter::new();
        w.tensor_table(&p).unwrap();
        let mut r = ByteReader::new(&w.buf);
        let q = r.tensor_table(|n| !is_running_stat(n)).unwrap();
        r.finish().unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn truncation_is_format_error() {
        let mut w = ByteWriter::new();
        w.u32(7);
        let mut r = ByteReader::new(&w.buf[..3]);
        assert!(matches!(r.u32(), Err(Error::Format(_))));
    }
}
