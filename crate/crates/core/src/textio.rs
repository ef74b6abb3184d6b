//! Line-oriented tensor blocks shared by the checkpoint formats.
//!
//! A block is `name rows cols` followed by one line per row of
//! nine-significant-digit values.

use std::io::{BufRead, Lines, Write};

use crate::error::{Error, Result};
use crate::grad::Tensor;

pub fn write_tensor<W: Write>(out: &mut W, name: &str, t: &Tensor) -> Result<()> {
    writeln!(out, "{name} {} {}", t.rows(), t.cols())?;
    for r in 0..t.rows() {
        let mut first = true;
        for v in t.row(r) {
            if !first {
                out.write_all(b" ")?;
            }
            first = false;
            write!(out, "{v:.8e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reader that tracks line numbers for error messages.
pub struct LineReader<R: BufRead> {
    lines: Lines<R>,
    line: usize,
}

impl<R: BufRead> LineReader<R> {
    pub fn new(input: R) -> Self {
        LineReader {
            lines: input.lines(),
            line: 0,
        }
    }

    pub fn line_number(&self) -> usize {
        self.line
    }

    pub fn next_line(&mut self) -> Result<String> {
        self.line += 1;
        match self.lines.next() {
            Some(l) => Ok(l?),
            None => Err(Error::parse(self.line, "unexpected end of file")),
        }
    }

    /// Next line split on whitespace; the first token must equal `tag`.
    pub fn expect_fields(&mut self, tag: &str) -> Result<Vec<String>> {
        let line = self.next_line()?;
        let fields: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
        if fields.first().map(String::as_str) != Some(tag) {
            return Err(Error::parse(self.line, format!("expected `{tag}`, found `{line}`")));
        }
        Ok(fields)
    }

    pub fn parse_field<T: std::str::FromStr>(&self, s: &str) -> Result<T> {
        s.parse().map_err(|_| Error::parse(self.line, format!("bad value `{s}`")))
    }

    pub fn read_tensor(&mut self, name: &str) -> Result<Tensor> {
        let f = self.expect_fields(name)?;
        if f.len() != 3 {
            return Err(Error::parse(self.line, format!("bad `{name}` block header")));
        }
        let rows: usize = self.parse_field(&f[1])?;
        let cols: usize = self.parse_field(&f[2])?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = self.next_line()?;
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(self.parse_field::<f64>(tok)?);
            }
            if data.len() - before != cols {
                return Err(Error::parse(self.line, format!("`{name}` row needs {cols} values")));
            }
        }
        Tensor::from_vec(rows, cols, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_block_round_trip() {
        let t = Tensor::from_rows(&[vec![1.0, -2.5e-9], vec![1.0 / 7.0, 3e12]]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, "w", &t).unwrap();
        write_tensor(&mut buf, "empty", &Tensor::zeros(0, 3)).unwrap();
        let mut r = LineReader::new(buf.as_slice());
        let back = r.read_tensor("w").unwrap();
        assert!(back.max_abs_diff(&t) <= 3e12 * 1e-8);
        assert_eq!(back.get(0, 0), 1.0);
        assert_eq!(r.read_tensor("empty").unwrap().shape(), (0, 3));
        assert!(r.next_line().is_err());
    }

    #[test]
    fn wrong_name_is_an_error() {
        let mut r = LineReader::new("b 1 1\n0\n".as_bytes());
        assert!(r.read_tensor("w").is_err());
    }
}
