//! Binary-operation tables, tokenization, train/validation splits and
//! label-swap outliers.
//!
//! Every equation is the five-token sequence `a <op> b = c`. Element tokens
//! occupy ids `0..n` (residues in numeric order, or S5 in lexicographic
//! order), followed by the operator token and the equality token.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{self, enumerate_s5, mod_inverse, Permutation, DEFAULT_PRIME};
use crate::error::{Error, Result};

pub const EQUATION_LEN: usize = 5;
/// Sequence position holding `=`; its logits predict the answer.
pub const ANSWER_POSITION: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperationKind {
    /// x + y (mod p)
    ModAdd,
    /// x - y (mod p)
    ModSub,
    /// x / y (mod p), 0 < y < p
    ModDiv,
    /// x / y (mod p) if y is odd, otherwise x - y (mod p)
    ModDivOddElseSub,
    /// x² + y² (mod p)
    QuadXxYy,
    /// x² + xy + y² (mod p)
    QuadXxXyYy,
    /// x² + xy + y² + x (mod p)
    QuadXxXyYyX,
    /// x³ + xy (mod p)
    CubeXxxXy,
    /// x³ + xy² + y (mod p)
    CubeXxxXyyY,
    /// x·y in S5
    S5Compose,
    /// x·y·x⁻¹ in S5
    S5Conj,
    /// x·y·x in S5
    S5Xyx,
}

impl OperationKind {
    pub const ALL: [OperationKind; 12] = [
        OperationKind::ModAdd,
        OperationKind::ModSub,
        OperationKind::ModDiv,
        OperationKind::ModDivOddElseSub,
        OperationKind::QuadXxYy,
        OperationKind::QuadXxXyYy,
        OperationKind::QuadXxXyYyX,
        OperationKind::CubeXxxXy,
        OperationKind::CubeXxxXyyY,
        OperationKind::S5Compose,
        OperationKind::S5Conj,
        OperationKind::S5Xyx,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OperationKind::ModAdd => "mod_add",
            OperationKind::ModSub => "mod_sub",
            OperationKind::ModDiv => "mod_div",
            OperationKind::ModDivOddElseSub => "mod_div_odd_else_sub",
            OperationKind::QuadXxYy => "quad_xx_yy",
            OperationKind::QuadXxXyYy => "quad_xx_xy_yy",
            OperationKind::QuadXxXyYyX => "quad_xx_xy_yy_x",
            OperationKind::CubeXxxXy => "cube_xxx_xy",
            OperationKind::CubeXxxXyyY => "cube_xxx_xyy_y",
            OperationKind::S5Compose => "s5_compose",
            OperationKind::S5Conj => "s5_conj",
            OperationKind::S5Xyx => "s5_xyx",
        }
    }

    pub fn formula(self) -> &'static str {
        match self {
            OperationKind::ModAdd => "x+y (mod p)",
            OperationKind::ModSub => "x-y (mod p)",
            OperationKind::ModDiv => "x/y (mod p), y != 0",
            OperationKind::ModDivOddElseSub => "x/y (mod p) if y odd, else x-y (mod p)",
            OperationKind::QuadXxYy => "x^2+y^2 (mod p)",
            OperationKind::QuadXxXyYy => "x^2+xy+y^2 (mod p)",
            OperationKind::QuadXxXyYyX => "x^2+xy+y^2+x (mod p)",
            OperationKind::CubeXxxXy => "x^3+xy (mod p)",
            OperationKind::CubeXxxXyyY => "x^3+xy^2+y (mod p)",
            OperationKind::S5Compose => "x.y in S5",
            OperationKind::S5Conj => "x.y.x^-1 in S5",
            OperationKind::S5Xyx => "x.y.x in S5",
        }
    }

    pub fn is_permutation_group(self) -> bool {
        matches!(
            self,
            OperationKind::S5Compose | OperationKind::S5Conj | OperationKind::S5Xyx
        )
    }

    fn divides(self) -> bool {
        matches!(self, OperationKind::ModDiv | OperationKind::ModDivOddElseSub)
    }

    /// Whether the operand `y = 0` is excluded from the table.
    fn excludes_zero_divisor(self) -> bool {
        self == OperationKind::ModDiv
    }

    /// `op(x, y) = op(y, x)` for every pair.
    pub fn is_symmetric(self) -> bool {
        matches!(
            self,
            OperationKind::ModAdd | OperationKind::QuadXxYy | OperationKind::QuadXxXyYy
        )
    }
}

impl fmt::Display for OperationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim().replace('-', "_");
        OperationKind::ALL
            .into_iter()
            .find(|k| k.name() == wanted)
            .ok_or_else(|| {
                let names: Vec<_> = OperationKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!(
                    "unknown operation {s:?}; expected one of: {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OperationSpec {
    pub kind: OperationKind,
    /// Modulus for the residue operations; ignored for S5.
    #[serde(default = "default_modulus")]
    pub modulus: u64,
}

fn default_modulus() -> u64 {
    DEFAULT_PRIME
}

impl OperationSpec {
    pub fn new(kind: OperationKind, modulus: u64) -> Result<Self> {
        let spec = Self { kind, modulus };
        spec.validate()?;
        Ok(spec)
    }

    pub fn s5(kind: OperationKind) -> Result<Self> {
        Self::new(kind, DEFAULT_PRIME)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.is_permutation_group() {
            return Ok(());
        }
        if self.modulus < 2 {
            return Err(Error::Config(format!("modulus must be at least 2, got {}", self.modulus)));
        }
        if self.modulus > 1 << 20 {
            return Err(Error::Config(format!("modulus {} is too large", self.modulus)));
        }
        if self.kind.divides() && !algebra::is_prime(self.modulus) {
            return Err(Error::Config(format!(
                "{} needs a prime modulus, got {}",
                self.kind, self.modulus
            )));
        }
        Ok(())
    }

    /// Number of distinct operand/result elements.
    pub fn num_elements(&self) -> usize {
        if self.kind.is_permutation_group() {
            algebra::S5_ORDER
        } else {
            self.modulus as usize
        }
    }

    /// Short identifier such as `mod_div_p97` or `s5_compose`.
    pub fn label(&self) -> String {
        if self.kind.is_permutation_group() {
            self.kind.name().to_string()
        } else {
            format!("{}_p{}", self.kind, self.modulus)
        }
    }
}

fn s5_elements() -> &'static [Permutation] {
    static S5: OnceLock<Vec<Permutation>> = OnceLock::new();
    S5.get_or_init(enumerate_s5)
}

/// Result of `x ∘ y`, with operands and result given as element indices.
pub fn eval_op(spec: &OperationSpec, x: usize, y: usize) -> Result<usize> {
    let n = spec.num_elements();
    if x >= n || y >= n {
        return Err(Error::Domain(format!(
            "operands ({x}, {y}) outside 0..{n} for {}",
            spec.kind
        )));
    }
    if spec.kind.is_permutation_group() {
        let s5 = s5_elements();
        let (px, py) = (&s5[x], &s5[y]);
        let out = match spec.kind {
            OperationKind::S5Compose => px.compose(py),
            OperationKind::S5Conj => px.compose(py).compose(&px.inverse()),
            OperationKind::S5Xyx => px.compose(py).compose(px),
            _ => unreachable!(),
        };
        return Ok(out.lex_index());
    }
    let p = spec.modulus;
    let (x, y) = (x as u64, y as u64);
    let sub = (x + p - y) % p;
    let div = |x: u64, y: u64| -> Result<u64> { Ok(x * mod_inverse(y, p)? % p) };
    let value = match spec.kind {
        OperationKind::ModAdd => (x + y) % p,
        OperationKind::ModSub => sub,
        OperationKind::ModDiv => div(x, y)?,
        OperationKind::ModDivOddElseSub => {
            if y % 2 == 1 {
                div(x, y)?
            } else {
                sub
            }
        }
        OperationKind::QuadXxYy => (x * x + y * y) % p,
        OperationKind::QuadXxXyYy => (x * x + x * y + y * y) % p,
        OperationKind::QuadXxXyYyX => (x * x + x * y + y * y + x) % p,
        OperationKind::CubeXxxXy => (x * x % p * x + x * y) % p,
        OperationKind::CubeXxxXyyY => (x * x % p * x + x * (y * y % p) + y) % p,
        _ => unreachable!(),
    };
    Ok(value as usize)
}

/// Symbol table: elements, then `<op>`, then `=`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
}

impl Vocabulary {
    pub fn for_spec(spec: &OperationSpec) -> Self {
        let mut symbols: Vec<String> = if spec.kind.is_permutation_group() {
            s5_elements().iter().map(|p| p.to_string()).collect()
        } else {
            (0..spec.modulus).map(|v| v.to_string()).collect()
        };
        symbols.push("<op>".into());
        symbols.push("=".into());
        Self { symbols }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.symbols.len() - 2
    }

    pub fn op_token(&self) -> usize {
        self.symbols.len() - 2
    }

    pub fn eq_token(&self) -> usize {
        self.symbols.len() - 1
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.symbols[id]
    }

    pub fn id_of(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Equation {
    pub tokens: [usize; EQUATION_LEN],
    pub is_outlier: bool,
}

impl Equation {
    pub fn new(a: usize, b: usize, c: usize, vocab: &Vocabulary) -> Self {
        Self {
            tokens: [a, vocab.op_token(), b, vocab.eq_token(), c],
            is_outlier: false,
        }
    }

    pub fn a(&self) -> usize {
        self.tokens[0]
    }

    pub fn b(&self) -> usize {
        self.tokens[2]
    }

    pub fn c(&self) -> usize {
        self.tokens[4]
    }
}

/// Every valid `(x, y)` pair exactly once, `x`-major.
pub fn build_table(spec: &OperationSpec) -> Result<Vec<Equation>> {
    spec.validate()?;
    let vocab = Vocabulary::for_spec(spec);
    let n = spec.num_elements();
    let y_start = usize::from(spec.kind.excludes_zero_divisor());
    let mut table = Vec::with_capacity(n * n);
    for x in 0..n {
        for y in y_start..n {
            table.push(Equation::new(x, y, eval_op(spec, x, y)?, &vocab));
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Equation>,
    pub val: Vec<Equation>,
    pub fraction: f64,
    pub split_seed: u64,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn validate_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "training fraction must lie strictly between 0 and 1, got {fraction}"
        )));
    }
    Ok(())
}

/// Uniformly random training subset of `round(fraction * |table|)`
/// equations. Both halves keep the table's original order.
pub fn split(table: &[Equation], fraction: f64, split_seed: u64) -> Result<DatasetSplit> {
    validate_fraction(fraction)?;
    let n_train = (fraction * table.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..table.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
    let mut in_train = vec![false; table.len()];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (mut train, mut val) = (Vec::with_capacity(n_train), Vec::new());
    for (eq, take) in table.iter().zip(in_train) {
        if take {
            train.push(*eq);
        } else {
            val.push(*eq);
        }
    }
    Ok(DatasetSplit {
        train,
        val,
        fraction,
        split_seed,
    })
}

/// Replaces the answers of `k` random training equations with the answers
/// of `k` other, independently drawn, training equations.
pub fn inject_outliers(split: &DatasetSplit, k: usize, outlier_seed: u64) -> Result<DatasetSplit> {
    let n = split.train.len();
    if k > n {
        return Err(Error::Config(format!(
            "cannot inject {k} outliers into {n} training equations"
        )));
    }
    let mut out = split.clone();
    if k == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(outlier_seed);
    let targets = index::sample(&mut rng, n, k).into_vec();
    let donors = index::sample(&mut rng, n, k).into_vec();
    for (&t, &d) in targets.iter().zip(&donors) {
        out.train[t].tokens[EQUATION_LEN - 1] = split.train[d].c();
        out.train[t].is_outlier = true;
    }
    Ok(out)
}

/// Writes `a,b,c,token_a,token_b,token_c,split,is_outlier`, training rows
/// first.
pub fn write_split_csv(path: &Path, vocab: &Vocabulary, split: &DatasetSplit) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "a", "b", "c", "token_a", "token_b", "token_c", "split", "is_outlier",
    ])?;
    for (name, eqs) in [("train", &split.train), ("val", &split.val)] {
        for eq in eqs.iter() {
            w.write_record([
                vocab.symbol(eq.a()),
                vocab.symbol(eq.b()),
                vocab.symbol(eq.c()),
                &eq.a().to_string(),
                &eq.b().to_string(),
                &eq.c().to_string(),
                name,
                if eq.is_outlier { "true" } else { "false" },
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: OperationKind) -> OperationSpec {
        OperationSpec::new(kind, 97).unwrap()
    }

    #[test]
    fn table_sizes() {
        assert_eq!(build_table(&spec(OperationKind::ModAdd)).unwrap().len(), 9409);
        assert_eq!(build_table(&spec(OperationKind::ModDiv)).unwrap().len(), 9312);
        assert_eq!(
            build_table(&spec(OperationKind::ModDivOddElseSub)).unwrap().len(),
            9409
        );
        assert_eq!(build_table(&spec(OperationKind::S5Compose)).unwrap().len(), 14400);
    }

    #[test]
    fn closed_forms() {
        assert_eq!(eval_op(&spec(OperationKind::ModDivOddElseSub), 5, 4).unwrap(), 1);
        assert_eq!(eval_op(&spec(OperationKind::QuadXxYy), 3, 4).unwrap(), 25);
        assert_eq!(eval_op(&spec(OperationKind::CubeXxxXyyY), 2, 3).unwrap(), 29);
        assert_eq!(eval_op(&spec(OperationKind::CubeXxxXy), 2, 3).unwrap(), 14);
        assert_eq!(eval_op(&spec(OperationKind::QuadXxXyYyX), 1, 2).unwrap(), 8);
        // odd y takes the division branch: 6 / 3 = 2
        assert_eq!(eval_op(&spec(OperationKind::ModDivOddElseSub), 6, 3).unwrap(), 2);
    }

    #[test]
    fn conjugation_by_identity() {
        let s = spec(OperationKind::S5Conj);
        for y in 0..120 {
            assert_eq!(eval_op(&s, 0, y).unwrap(), y);
        }
    }

    #[test]
    fn tokens_have_fixed_layout() {
        let s = spec(OperationKind::ModSub);
        let vocab = Vocabulary::for_spec(&s);
        assert_eq!(vocab.len(), 99);
        for eq in build_table(&s).unwrap() {
            assert_eq!(eq.tokens.len(), 5);
            assert_eq!(eq.tokens[1], vocab.op_token());
            assert_eq!(eq.tokens[3], vocab.eq_token());
            assert!(eq.a() < 97 && eq.b() < 97 && eq.c() < 97);
        }
    }

    #[test]
    fn division_requires_prime_modulus() {
        assert!(OperationSpec::new(OperationKind::ModDiv, 96).is_err());
        assert!(OperationSpec::new(OperationKind::ModAdd, 96).is_ok());
    }

    #[test]
    fn operation_names_round_trip() {
        for k in OperationKind::ALL {
            assert_eq!(k.name().parse::<OperationKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
        let err = "mod_pow".parse::<OperationKind>().unwrap_err().to_string();
        assert!(err.contains("s5_xyx") && err.contains("mod_add"));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let table = build_table(&spec(OperationKind::ModDiv)).unwrap();
        let a = split(&table, 0.5, 3).unwrap();
        assert_eq!(a.train.len(), 4656);
        assert_eq!(a.len(), table.len());
        assert_eq!(a, split(&table, 0.5, 3).unwrap());
        assert_ne!(a.train, split(&table, 0.5, 4).unwrap().train);
        assert!(split(&table, 0.0, 1).is_err());
        assert!(split(&table, 1.0, 1).is_err());
    }

    #[test]
    fn zero_outliers_is_identity() {
        let table = build_table(&spec(OperationKind::ModAdd)).unwrap();
        let s = split(&table, 0.3, 1).unwrap();
        assert_eq!(inject_outliers(&s, 0, 9).unwrap(), s);
        assert!(inject_outliers(&s, s.train.len() + 1, 9).is_err());
    }
}
