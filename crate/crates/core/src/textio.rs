//! Helpers shared by the plain-text serialization formats.

use crate::error::{Error, Result};

/// Decimal rendering with 17 significant digits, exact on round trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn join_f64<'a>(xs: impl IntoIterator<Item = &'a f64>) -> String {
    xs.into_iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(" ")
}

/// Whitespace tokenizer that remembers line numbers for error messages.
/// Lines starting with `#` are skipped.
pub struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    pub fn new(text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim_start().starts_with('#'))
            .flat_map(|(n, l)| l.split_whitespace().map(move |t| (n + 1, t)))
            .collect();
        Self { items, pos: 0 }
    }

    fn line(&self) -> usize {
        self.items
            .get(self.pos)
            .or(self.items.last())
            .map_or(1, |(l, _)| *l)
    }

    pub fn next_str(&mut self) -> Result<&'a str> {
        let line = self.line();
        let tok = self.items.get(self.pos).ok_or(Error::Parse {
            line,
            msg: "unexpected end of input".into(),
        })?;
        self.pos += 1;
        Ok(tok.1)
    }

    pub fn expect(&mut self, word: &str) -> Result<()> {
        let line = self.line();
        let got = self.next_str()?;
        if got == word {
            Ok(())
        } else {
            Err(Error::Parse {
                line,
                msg: format!("expected {word:?}, found {got:?}"),
            })
        }
    }

    pub fn usize(&mut self) -> Result<usize> {
        let line = self.line();
        let t = self.next_str()?;
        t.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("expected an unsigned integer, found {t:?}"),
        })
    }

    pub fn f64(&mut self) -> Result<f64> {
        let line = self.line();
        let t = self.next_str()?;
        t.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("expected a number, found {t:?}"),
        })
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn finish(&self) -> Result<()> {
        match self.items.get(self.pos) {
            Some((line, t)) => Err(Error::Parse {
                line: *line,
                msg: format!("trailing token {t:?}"),
            }),
            None => Ok(()),
        }
    }
}
