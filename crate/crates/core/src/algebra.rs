//! Exact arithmetic in Z/p and the symmetric group S5.
//!
//! Permutations use one-line notation: entry `i` is the image of `i`.
//! Composition follows the convention `(x·y)(i) = x(y(i))`, i.e. `y` is
//! applied first. Every dataset and analysis in this crate goes through
//! [`Permutation::compose`], so the convention is applied uniformly.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt;

use crate::error::{Error, Result};

pub const DEFAULT_PRIME: u64 = 97;

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

pub fn mod_pow(mut base: u64, mut exp: u64, modulus: u64) -> u64 {
    let mut acc = 1 % modulus;
    base %= modulus;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * base % modulus;
        }
        base = base * base % modulus;
        exp >>= 1;
    }
    acc
}

/// Multiplicative inverse of `y` modulo prime `p` via Fermat's little theorem.
pub fn mod_inverse(y: u64, p: u64) -> Result<u64> {
    if y % p == 0 {
        return Err(Error::Domain(format!("0 has no inverse modulo {p}")));
    }
    Ok(mod_pow(y, p - 2, p))
}

/// Residue modulo a prime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModElement {
    value: u64,
    modulus: u64,
}

impl ModElement {
    pub fn new(value: u64, modulus: u64) -> Result<Self> {
        if !is_prime(modulus) {
            return Err(Error::Domain(format!("modulus {modulus} is not prime")));
        }
        if value >= modulus {
            return Err(Error::Domain(format!(
                "{value} is not a residue modulo {modulus}"
            )));
        }
        Ok(Self { value, modulus })
    }

    pub fn value(self) -> u64 {
        self.value
    }

    pub fn modulus(self) -> u64 {
        self.modulus
    }

    fn same_ring(self, other: Self) -> Result<u64> {
        if self.modulus != other.modulus {
            return Err(Error::Domain(format!(
                "mixed moduli {} and {}",
                self.modulus, other.modulus
            )));
        }
        Ok(self.modulus)
    }

    fn wrap(value: u64, modulus: u64) -> Self {
        Self { value, modulus }
    }

    pub fn inverse(self) -> Result<Self> {
        Ok(Self::wrap(mod_inverse(self.value, self.modulus)?, self.modulus))
    }
}

pub fn mod_add(x: ModElement, y: ModElement) -> Result<ModElement> {
    let p = x.same_ring(y)?;
    Ok(ModElement::wrap((x.value + y.value) % p, p))
}

pub fn mod_sub(x: ModElement, y: ModElement) -> Result<ModElement> {
    let p = x.same_ring(y)?;
    Ok(ModElement::wrap((x.value + p - y.value) % p, p))
}

pub fn mod_mul(x: ModElement, y: ModElement) -> Result<ModElement> {
    let p = x.same_ring(y)?;
    Ok(ModElement::wrap(x.value * y.value % p, p))
}

pub fn mod_div(x: ModElement, y: ModElement) -> Result<ModElement> {
    x.same_ring(y)?;
    mod_mul(x, y.inverse()?)
}

/// Multiplicative order of `g` modulo prime `p`, by repeated multiplication.
fn multiplicative_order(g: u64, p: u64) -> u64 {
    let mut acc = g % p;
    let mut order = 1;
    while acc != 1 {
        acc = acc * g % p;
        order += 1;
    }
    order
}

/// Smallest generator of the multiplicative group modulo prime `p`.
pub fn primitive_root(p: u64) -> Result<u64> {
    if !is_prime(p) {
        return Err(Error::Domain(format!("{p} is not prime")));
    }
    (1..p)
        .find(|&g| multiplicative_order(g, p) == p - 1)
        .ok_or_else(|| Error::Domain(format!("no primitive root modulo {p}")))
}

/// `table[x]` is the exponent `k` in `0..p-1` with `g^k = x (mod p)`;
/// `table[0]` is unused and left at `u64::MAX`.
pub fn discrete_log_table(g: u64, p: u64) -> Result<Vec<u64>> {
    let mut table = vec![u64::MAX; p as usize];
    let mut acc = 1;
    for k in 0..p - 1 {
        if table[acc as usize] != u64::MAX {
            return Err(Error::Domain(format!("{g} is not a primitive root modulo {p}")));
        }
        table[acc as usize] = k;
        acc = acc * g % p;
    }
    Ok(table)
}

pub const S5_DEGREE: usize = 5;
pub const S5_ORDER: usize = 120;

/// Element of S5 in one-line notation.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Permutation([u8; S5_DEGREE]);

impl Permutation {
    pub fn identity() -> Self {
        Self([0, 1, 2, 3, 4])
    }

    pub fn new(image: [u8; S5_DEGREE]) -> Result<Self> {
        let mut seen = [false; S5_DEGREE];
        for &i in &image {
            let i = i as usize;
            if i >= S5_DEGREE || seen[i] {
                return Err(Error::Domain(format!("{image:?} is not a permutation of 0..5")));
            }
            seen[i] = true;
        }
        Ok(Self(image))
    }

    /// Parses cycle notation such as `(0,3)(1,4)`; `()` is the identity.
    pub fn from_cycles(text: &str) -> Result<Self> {
        let mut image = [0u8, 1, 2, 3, 4];
        let mut used = [false; S5_DEGREE];
        let bad = || Error::Domain(format!("cannot parse cycle notation {text:?}"));
        let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        let mut rest = compact.as_str();
        while !rest.is_empty() {
            let body = rest.strip_prefix('(').ok_or_else(bad)?;
            let end = body.find(')').ok_or_else(bad)?;
            let inner = &body[..end];
            rest = &body[end + 1..];
            if inner.is_empty() {
                continue;
            }
            let cycle = inner
                .split(',')
                .map(|s| s.parse::<u8>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            for &i in &cycle {
                if i as usize >= S5_DEGREE || used[i as usize] {
                    return Err(bad());
                }
                used[i as usize] = true;
            }
            for (pos, &from) in cycle.iter().enumerate() {
                image[from as usize] = cycle[(pos + 1) % cycle.len()];
            }
        }
        Ok(Self(image))
    }

    pub fn image(&self) -> [u8; S5_DEGREE] {
        self.0
    }

    pub fn apply(&self, i: usize) -> usize {
        self.0[i] as usize
    }

    /// `self · other`, applying `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let mut out = [0u8; S5_DEGREE];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = self.0[other.0[i] as usize];
        }
        Self(out)
    }

    pub fn inverse(&self) -> Self {
        let mut out = [0u8; S5_DEGREE];
        for (i, &j) in self.0.iter().enumerate() {
            out[j as usize] = i as u8;
        }
        Self(out)
    }

    /// Position of this element in [`enumerate_s5`].
    pub fn lex_index(&self) -> usize {
        // Lehmer code
        let mut index = 0;
        for i in 0..S5_DEGREE {
            let smaller = self.0[i + 1..].iter().filter(|&&v| v < self.0[i]).count();
            index = index * (S5_DEGREE - i) + smaller;
        }
        index
    }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Permutation({self})")
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in self.0 {
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

pub fn perm_compose(x: &Permutation, y: &Permutation) -> Permutation {
    x.compose(y)
}

pub fn perm_inverse(x: &Permutation) -> Permutation {
    x.inverse()
}

/// All of S5 in lexicographic order of one-line notation.
pub fn enumerate_s5() -> Vec<Permutation> {
    fn extend(prefix: &mut Vec<u8>, used: &mut [bool; S5_DEGREE], out: &mut Vec<Permutation>) {
        if prefix.len() == S5_DEGREE {
            let mut image = [0u8; S5_DEGREE];
            image.copy_from_slice(prefix);
            out.push(Permutation(image));
            return;
        }
        for v in 0..S5_DEGREE {
            if !used[v] {
                used[v] = true;
                prefix.push(v as u8);
                extend(prefix, used, out);
                prefix.pop();
                used[v] = false;
            }
        }
    }
    let mut out = Vec::with_capacity(S5_ORDER);
    extend(&mut Vec::new(), &mut [false; S5_DEGREE], &mut out);
    out
}

/// Smallest subgroup containing `generators`, by breadth-first closure.
pub fn subgroup_closure(generators: &[Permutation]) -> BTreeSet<Permutation> {
    let mut seen: HashSet<Permutation> = HashSet::from([Permutation::identity()]);
    let mut queue = VecDeque::from([Permutation::identity()]);
    while let Some(g) = queue.pop_front() {
        for h in generators {
            // In a finite group, closure under multiplication by generators
            // also yields all inverses.
            let next = g.compose(h);
            if seen.insert(next) {
                queue.push_back(next);
            }
        }
    }
    seen.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CosetSide {
    /// `g·H`
    Left,
    /// `H·g`
    Right,
}

#[derive(Debug, Clone)]
pub struct CosetPartition {
    pub cosets: Vec<Vec<Permutation>>,
    /// Coset id of each element of S5, indexed by [`Permutation::lex_index`].
    pub labels: Vec<usize>,
}

/// Partitions S5 into cosets of `subgroup`. Cosets are numbered in order of
/// their lexicographically smallest element.
pub fn coset_partition(subgroup: &BTreeSet<Permutation>, side: CosetSide) -> Result<CosetPartition> {
    if subgroup.is_empty() || S5_ORDER % subgroup.len() != 0 {
        return Err(Error::Domain(format!(
            "a subgroup of S5 cannot have {} elements",
            subgroup.len()
        )));
    }
    let mut labels = vec![usize::MAX; S5_ORDER];
    let mut cosets = Vec::new();
    for g in enumerate_s5() {
        if labels[g.lex_index()] != usize::MAX {
            continue;
        }
        let mut coset: Vec<Permutation> = subgroup
            .iter()
            .map(|h| match side {
                CosetSide::Left => g.compose(h),
                CosetSide::Right => h.compose(&g),
            })
            .collect();
        coset.sort();
        for x in &coset {
            if labels[x.lex_index()] != usize::MAX {
                return Err(Error::Domain("elements do not form a subgroup".into()));
            }
            labels[x.lex_index()] = cosets.len();
        }
        cosets.push(coset);
    }
    Ok(CosetPartition { cosets, labels })
}
