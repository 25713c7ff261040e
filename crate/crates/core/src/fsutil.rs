//! Small file helpers shared by the on-disk formats.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temp file and renames it over `path`, so
/// readers never observe a partially written file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut tmp_name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_string(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Splits a file into its text header (up to and including the `end` line)
/// and the binary payload that follows.
pub(crate) fn split_header<'a>(path: &Path, bytes: &'a [u8]) -> Result<(Vec<&'a str>, &'a [u8])> {
    const END: &[u8] = b"\nend\n";
    let pos = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::format(path, "missing `end` header terminator"))?;
    let header = std::str::from_utf8(&bytes[..pos]).map_err(|_| Error::format(path, "header is not UTF-8"))?;
    Ok((header.lines().collect(), &bytes[pos + END.len()..]))
}

/// Little-endian cursor over a binary payload.
pub(crate) struct Reader<'a> {
    path: &'a Path,
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(path: &'a Path, buf: &'a [u8]) -> Self {
        Self { path, buf }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::format(self.path, "payload truncated"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        Ok(self.take(n)?.to_vec())
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn finish(self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::format(self.path, format!("{} trailing bytes", self.buf.len())))
        }
    }
}

pub(crate) fn put_f64s<'a>(out: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Parses a `key value...` header line, checking the key.
pub(crate) fn header_field<'a>(path: &Path, lines: &[&'a str], idx: usize, key: &str) -> Result<&'a str> {
    let line = lines
        .get(idx)
        .ok_or_else(|| Error::format(path, format!("header ends before `{key}`")))?;
    match line.split_once(' ') {
        Some((k, v)) if k == key => Ok(v.trim()),
        None if *line == key => Ok(""),
        _ => Err(Error::format(path, format!("expected header field `{key}`, found `{line}`"))),
    }
}

pub(crate) fn parse_num<T: std::str::FromStr>(path: &Path, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::format(path, format!("header field `{key}`: cannot parse `{v}`")))
}

pub(crate) fn parse_list<T: std::str::FromStr>(path: &Path, key: &str, v: &str) -> Result<Vec<T>> {
    v.split_whitespace().map(|x| parse_num(path, key, x)).collect()
}
