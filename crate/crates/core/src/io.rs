//! Plain-text tensor and factor-set files.
//!
//! A tensor block is a header line `order d1 … dℓ` followed by the entries in
//! row-major order, whitespace separated. A factor-set file starts with
//! `order rank`, then holds one order-2 block per mode and an order-1 block
//! of weights. Lines starting with `#` are comments and are skipped.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, FactorSet, Matrix};

/// Shortest round-trip representation, switching to exponent form for very
/// large or small magnitudes.
pub fn format_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn write_block(out: &mut String, dims: &[usize], data: &[f64]) {
    out.push_str(&dims.len().to_string());
    for d in dims {
        let _ = write!(out, " {d}");
    }
    out.push('\n');
    let row = *dims.last().unwrap_or(&1);
    for chunk in data.chunks(row.max(1)) {
        let line: Vec<String> = chunk.iter().map(|&x| format_f64(x)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

fn comment_lines(out: &mut String, comments: &[String]) {
    for c in comments {
        for line in c.lines() {
            let _ = writeln!(out, "# {line}");
        }
    }
}

pub fn tensor_to_string(t: &DenseTensor, comments: &[String]) -> String {
    let mut out = String::new();
    comment_lines(&mut out, comments);
    write_block(&mut out, t.dims(), t.data());
    out
}

pub fn factor_set_to_string(fs: &FactorSet, comments: &[String]) -> String {
    let mut out = String::new();
    comment_lines(&mut out, comments);
    let _ = writeln!(out, "{} {}", fs.order(), fs.rank());
    for f in fs.factors() {
        let t = DenseTensor::from_matrix(f);
        write_block(&mut out, t.dims(), t.data());
    }
    write_block(&mut out, &[fs.rank()], fs.weights());
    out
}

pub fn write_tensor<W: Write>(mut w: W, t: &DenseTensor, comments: &[String]) -> Result<()> {
    w.write_all(tensor_to_string(t, comments).as_bytes())?;
    Ok(())
}

pub fn write_factor_set<W: Write>(mut w: W, fs: &FactorSet, comments: &[String]) -> Result<()> {
    w.write_all(factor_set_to_string(fs, comments).as_bytes())?;
    Ok(())
}

struct Tokens {
    items: Vec<(usize, String)>,
    pos: usize,
}

impl Tokens {
    fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut items = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim_start();
            if trimmed.starts_with('#') {
                continue;
            }
            items.extend(trimmed.split_whitespace().map(|t| (i + 1, t.to_string())));
        }
        Ok(Self { items, pos: 0 })
    }

    fn line(&self) -> usize {
        self.items
            .get(self.pos)
            .or_else(|| self.items.last())
            .map_or(1, |t| t.0)
    }

    fn next_raw(&mut self, what: &str) -> Result<(usize, &str)> {
        let line = self.line();
        let item = self.items.get(self.pos).ok_or_else(|| Error::Parse {
            line,
            msg: format!("unexpected end of input while reading {what}"),
        })?;
        self.pos += 1;
        Ok((item.0, item.1.as_str()))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let (line, tok) = self.next_raw(what)?;
        tok.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("expected a non-negative integer for {what}, found {tok:?}"),
        })
    }

    fn f64(&mut self) -> Result<f64> {
        let (line, tok) = self.next_raw("a value")?;
        let v: f64 = tok.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("expected a number, found {tok:?}"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse { line, msg: format!("non-finite value {tok:?}") });
        }
        Ok(v)
    }

    fn block(&mut self) -> Result<DenseTensor> {
        let line = self.line();
        let order = self.usize("the tensor order")?;
        if order == 0 {
            return Err(Error::Parse { line, msg: "tensor order must be at least 1".into() });
        }
        let dims = (0..order)
            .map(|_| self.usize("a dimension"))
            .collect::<Result<Vec<_>>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&l| l > 0)
            .ok_or_else(|| Error::Parse { line, msg: format!("invalid dimensions {dims:?}") })?;
        let data = (0..len).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        DenseTensor::new(dims, data)
    }

    fn finish(&self) -> Result<()> {
        match self.items.get(self.pos) {
            None => Ok(()),
            Some((line, tok)) => Err(Error::Parse {
                line: *line,
                msg: format!("trailing content starting at {tok:?}"),
            }),
        }
    }
}

pub fn read_tensor<R: BufRead>(r: R) -> Result<DenseTensor> {
    let mut tok = Tokens::read(r)?;
    let t = tok.block()?;
    tok.finish()?;
    Ok(t)
}

pub fn read_factor_set<R: BufRead>(r: R) -> Result<FactorSet> {
    let mut tok = Tokens::read(r)?;
    let line = tok.line();
    let order = tok.usize("the factor-set order")?;
    let rank = tok.usize("the factor-set rank")?;
    let mut factors = Vec::with_capacity(order);
    for j in 0..order {
        let line = tok.line();
        let b = tok.block()?;
        let m: Matrix = b.to_matrix().map_err(|_| Error::Parse {
            line,
            msg: format!("factor {j} is not an order-2 block"),
        })?;
        if m.ncols() != rank {
            return Err(Error::Parse {
                line,
                msg: format!("factor {j} has {} columns, expected {rank}", m.ncols()),
            });
        }
        factors.push(m);
    }
    let wline = tok.line();
    let w = tok.block()?;
    if w.order() != 1 || w.len() != rank {
        return Err(Error::Parse { line: wline, msg: format!("expected {rank} weights") });
    }
    tok.finish()?;
    FactorSet::new(factors, w.into_data()).map_err(|e| Error::Parse { line, msg: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_vec, stream};

    #[test]
    fn tensor_round_trip_is_lossless() {
        let mut data = gaussian_vec(&mut stream(1, "io", &[]), 12);
        data[0] = 1e-300;
        data[1] = -0.0;
        data[2] = 123456789.12345679;
        let t = DenseTensor::new(vec![2, 3, 2], data).unwrap();
        let s = tensor_to_string(&t, &["seed 1".into()]);
        assert!(s.starts_with("# seed 1\n3 2 3 2\n"));
        let back = read_tensor(s.as_bytes()).unwrap();
        assert_eq!(back.dims(), t.dims());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn factor_set_round_trip() {
        let u = Matrix::from_row_slice(2, 2, &[1.0, 0.5, -0.25, 2.0]);
        let v = Matrix::from_row_slice(3, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let fs = FactorSet::new(vec![u, v], vec![3.0, -1.5]).unwrap();
        let s = factor_set_to_string(&fs, &[]);
        assert_eq!(read_factor_set(s.as_bytes()).unwrap(), fs);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match read_tensor("# c\n2 2 2\n1 2\n3 x\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_tensor("2 2 2\n1 2 3\n".as_bytes()), Err(Error::Parse { .. })));
        assert!(matches!(read_tensor("1 2\n1 2 3\n".as_bytes()), Err(Error::Parse { .. })));
        assert!(matches!(read_tensor("1 0\n".as_bytes()), Err(Error::Parse { .. })));
        assert!(matches!(read_tensor("1 1\nnan\n".as_bytes()), Err(Error::Parse { .. })));
    }

    #[test]
    fn format_switches_to_exponent() {
        assert_eq!(format_f64(0.5), "0.5");
        assert_eq!(format_f64(2.0), "2");
        assert_eq!(format_f64(1e-9), "1e-9");
        assert_eq!(format_f64(0.0), "0");
    }
}
