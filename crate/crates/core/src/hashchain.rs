//! Digest primitives and chain constructions.
//!
//! Every chain links units by digest-prefixing: the running value is hashed
//! in front of the next unit, `h_i = h(h_{i-1} || unit_i)`. Keyed digests use
//! the same prefix form with the key in place of the chaining value.

use std::fmt;

use md5::Md5;
use sha1::{Digest as _, Sha1};
use thiserror::Error;

/// Largest digest length supported by any [`Algorithm`].
pub const MAX_DIGEST_LEN: usize = 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChainError {
    #[error("digest algorithms differ: {0} vs {1}")]
    AlgorithmMismatch(Algorithm, Algorithm),
    #[error("cannot combine an empty list of digests")]
    EmptyList,
    #[error("digest length {got} does not match {algorithm} ({expected} octets)")]
    BadLength {
        algorithm: Algorithm,
        expected: usize,
        got: usize,
    },
}

/// The two digest families: 16-octet (MD5 class) and 20-octet (SHA-1 class).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    D16,
    D20,
}

impl Algorithm {
    pub const ALL: [Algorithm; 2] = [Algorithm::D16, Algorithm::D20];

    pub const fn len(self) -> usize {
        match self {
            Algorithm::D16 => 16,
            Algorithm::D20 => 20,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::D16 => "d16",
            Algorithm::D20 => "d20",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "d16" | "md5" => Some(Algorithm::D16),
            "d20" | "sha1" | "sha-1" => Some(Algorithm::D20),
            _ => None,
        }
    }

    /// The primitive's standard initial chaining words, big-endian.
    ///
    /// These double as the public standard vector `IV_st` (and the default
    /// `IV_0` when no key exchange has delivered a secret one).
    pub fn standard_iv(self) -> Digest {
        const WORDS: [u32; 5] = [0x6745_2301, 0xefcd_ab89, 0x98ba_dcfe, 0x1032_5476, 0xc3d2_e1f0];
        let mut bytes = [0u8; MAX_DIGEST_LEN];
        for (i, w) in WORDS.iter().enumerate() {
            bytes[i * 4..i * 4 + 4].copy_from_slice(&w.to_be_bytes());
        }
        Digest::from_array(self, bytes)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A fixed-length digest value tagged with its algorithm.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Digest {
    algorithm: Algorithm,
    bytes: [u8; MAX_DIGEST_LEN],
}

impl Digest {
    fn from_array(algorithm: Algorithm, mut bytes: [u8; MAX_DIGEST_LEN]) -> Self {
        bytes[algorithm.len()..].fill(0);
        Digest { algorithm, bytes }
    }

    pub fn zero(algorithm: Algorithm) -> Self {
        Digest {
            algorithm,
            bytes: [0; MAX_DIGEST_LEN],
        }
    }

    pub fn from_slice(algorithm: Algorithm, bytes: &[u8]) -> Result<Self, ChainError> {
        if bytes.len() != algorithm.len() {
            return Err(ChainError::BadLength {
                algorithm,
                expected: algorithm.len(),
                got: bytes.len(),
            });
        }
        let mut arr = [0u8; MAX_DIGEST_LEN];
        arr[..bytes.len()].copy_from_slice(bytes);
        Ok(Digest {
            algorithm,
            bytes: arr,
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn len(&self) -> usize {
        self.algorithm.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes[..self.algorithm.len()]
    }

    pub fn is_zero(&self) -> bool {
        self.as_bytes().iter().all(|&b| b == 0)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.as_bytes())
    }

    /// Octet-wise XOR with another digest of the same algorithm.
    pub fn xor(&self, other: &Digest) -> Result<Digest, ChainError> {
        if self.algorithm != other.algorithm {
            return Err(ChainError::AlgorithmMismatch(self.algorithm, other.algorithm));
        }
        let mut out = self.bytes;
        for (o, b) in out.iter_mut().zip(other.bytes.iter()) {
            *o ^= b;
        }
        Ok(Digest {
            algorithm: self.algorithm,
            bytes: out,
        })
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({}:{})", self.algorithm, self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Streaming digest over either primitive.
#[derive(Clone)]
pub enum Hasher {
    D16(Md5),
    D20(Sha1),
}

impl Hasher {
    pub fn new(algorithm: Algorithm) -> Self {
        match algorithm {
            Algorithm::D16 => Hasher::D16(Md5::new()),
            Algorithm::D20 => Hasher::D20(Sha1::new()),
        }
    }

    pub fn update(&mut self, bytes: &[u8]) {
        match self {
            Hasher::D16(h) => h.update(bytes),
            Hasher::D20(h) => h.update(bytes),
        }
    }

    pub fn finalize(self) -> Digest {
        let mut arr = [0u8; MAX_DIGEST_LEN];
        match self {
            Hasher::D16(h) => {
                arr[..16].copy_from_slice(&h.finalize());
                Digest::from_array(Algorithm::D16, arr)
            }
            Hasher::D20(h) => {
                arr.copy_from_slice(&h.finalize());
                Digest::from_array(Algorithm::D20, arr)
            }
        }
    }
}

pub fn digest(algorithm: Algorithm, bytes: &[u8]) -> Digest {
    let mut h = Hasher::new(algorithm);
    h.update(bytes);
    h.finalize()
}

/// Digest of the concatenation of `parts`, without materializing it.
pub fn digest_parts<'a, I>(algorithm: Algorithm, parts: I) -> Digest
where
    I: IntoIterator<Item = &'a [u8]>,
{
    let mut h = Hasher::new(algorithm);
    for part in parts {
        h.update(part);
    }
    h.finalize()
}

/// Prefix-keyed digest: `h(key || message)`.
pub fn keyed_digest(algorithm: Algorithm, key: &[u8], message: &[u8]) -> Digest {
    digest_parts(algorithm, [key, message])
}

/// XOR of a non-empty list of same-algorithm digests.
pub fn xor_digests<'a, I>(digests: I) -> Result<Digest, ChainError>
where
    I: IntoIterator<Item = &'a Digest>,
{
    let mut iter = digests.into_iter();
    let first = *iter.next().ok_or(ChainError::EmptyList)?;
    iter.try_fold(first, |acc, d| acc.xor(d))
}

/// Position in a forward chain: the value that prefixes the next unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainState {
    iv: Digest,
    position: u64,
}

impl ChainState {
    pub fn new(iv: Digest) -> Self {
        ChainState { iv, position: 0 }
    }

    pub fn at(iv: Digest, position: u64) -> Self {
        ChainState { iv, position }
    }

    pub fn iv(&self) -> Digest {
        self.iv
    }

    pub fn algorithm(&self) -> Algorithm {
        self.iv.algorithm()
    }

    pub fn position(&self) -> u64 {
        self.position
    }

    /// Digest the unit under the current IV without advancing.
    pub fn peek(&self, unit: &[u8]) -> Digest {
        self.peek_parts([unit])
    }

    pub fn peek_parts<'a, I>(&self, parts: I) -> Digest
    where
        I: IntoIterator<Item = &'a [u8]>,
    {
        let mut h = Hasher::new(self.algorithm());
        h.update(self.iv.as_bytes());
        for part in parts {
            h.update(part);
        }
        h.finalize()
    }

    /// Move the chain forward onto an already known link value.
    pub fn advance(&self, next: Digest) -> ChainState {
        ChainState {
            iv: next,
            position: self.position + 1,
        }
    }
}

/// `h(iv || unit)`; the result becomes the next IV.
pub fn chain_step(state: &ChainState, unit: &[u8]) -> (Digest, ChainState) {
    let out = state.peek(unit);
    (out, state.advance(out))
}

/// Two concurrent chains: an unkeyed inner chain over data units seeded with
/// the standard vector, and an outer chain seeded with the secret vector that
/// only ever consumes inner outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlhcState {
    pub inner: ChainState,
    pub outer: ChainState,
}

impl MlhcState {
    pub fn new(iv_st: Digest, iv_sec: Digest) -> Self {
        MlhcState {
            inner: ChainState::new(iv_st),
            outer: ChainState::new(iv_sec),
        }
    }

    pub fn inner_iv(&self) -> Digest {
        self.inner.iv()
    }

    pub fn outer_iv(&self) -> Digest {
        self.outer.iv()
    }
}

/// Advance both layers over one data unit; returns `(inner, outer, next)`.
pub fn mlhc_step(state: &MlhcState, unit: &[u8]) -> (Digest, Digest, MlhcState) {
    let (inner, inner_state) = chain_step(&state.inner, unit);
    let (outer, outer_state) = chain_step(&state.outer, inner.as_bytes());
    (
        inner,
        outer,
        MlhcState {
            inner: inner_state,
            outer: outer_state,
        },
    )
}

/// Replay recorded inner digests into an outer chain.
pub fn mlhc_outer_from_inner(iv_sec: Digest, inner: &[Digest]) -> Vec<Digest> {
    let mut state = ChainState::new(iv_sec);
    inner
        .iter()
        .map(|d| {
            let (out, next) = chain_step(&state, d.as_bytes());
            state = next;
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_input_vectors() {
        assert_eq!(
            digest(Algorithm::D16, b"").to_hex(),
            "d41d8cd98f00b204e9800998ecf8427e"
        );
        assert_eq!(
            digest(Algorithm::D20, b"").to_hex(),
            "da39a3ee5e6b4b0d3255bfef95601890afd80709"
        );
        assert_eq!(
            digest(Algorithm::D20, b"abc").to_hex(),
            "a9993e364706816aba3e25717850c26c9cd0d89d"
        );
        assert_eq!(
            digest(Algorithm::D16, b"abc").to_hex(),
            "900150983cd24fb0d6963f7d28e17f72"
        );
    }

    #[test]
    fn digest_lengths() {
        for alg in Algorithm::ALL {
            assert_eq!(digest(alg, b"x").as_bytes().len(), alg.len());
            assert_eq!(alg.standard_iv().as_bytes().len(), alg.len());
        }
        assert_eq!(
            Algorithm::D16.standard_iv().to_hex(),
            "67452301efcdab8998badcfe10325476"
        );
    }

    #[test]
    fn deterministic_and_bit_sensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let len = rng.gen_range(1..200);
            let a: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let mut b = a.clone();
            let bit = rng.gen_range(0..len * 8);
            b[bit / 8] ^= 1 << (bit % 8);
            for alg in Algorithm::ALL {
                assert_eq!(digest(alg, &a), digest(alg, &a));
                assert_ne!(digest(alg, &a), digest(alg, &b));
            }
        }
    }

    #[test]
    fn parts_match_concatenation() {
        let d1 = digest_parts(Algorithm::D20, [&b"ab"[..], b"", b"cd"]);
        assert_eq!(d1, digest(Algorithm::D20, b"abcd"));
    }

    #[test]
    fn chaining_depends_on_predecessor() {
        let alg = Algorithm::D20;
        let s1 = ChainState::new(digest(alg, b"one"));
        let s2 = ChainState::new(digest(alg, b"two"));
        let (a, _) = chain_step(&s1, b"block");
        let (b, _) = chain_step(&s2, b"block");
        assert_ne!(a, b);
    }

    // Independent fold: explicit concatenation into a fresh buffer.
    fn fold_oracle(alg: Algorithm, iv: Digest, units: &[Vec<u8>]) -> Digest {
        let mut cur = iv.as_bytes().to_vec();
        for u in units {
            let mut buf = cur.clone();
            buf.extend_from_slice(u);
            cur = digest(alg, &buf).as_bytes().to_vec();
        }
        Digest::from_slice(alg, &cur).unwrap()
    }

    fn fold(iv: Digest, units: &[Vec<u8>]) -> Digest {
        units
            .iter()
            .fold(ChainState::new(iv), |s, u| chain_step(&s, u).1)
            .iv()
    }

    #[test]
    fn fold_matches_oracle_and_order_matters() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for alg in Algorithm::ALL {
            for _ in 0..50 {
                let n = rng.gen_range(2..8);
                let units: Vec<Vec<u8>> = (0..n)
                    .map(|_| (0..rng.gen_range(1..300)).map(|_| rng.gen()).collect())
                    .collect();
                let iv = alg.standard_iv();
                assert_eq!(fold(iv, &units), fold_oracle(alg, iv, &units));
                let mut swapped = units.clone();
                let i = rng.gen_range(0..n - 1);
                swapped.swap(i, i + 1);
                if swapped != units {
                    assert_ne!(fold(iv, &units), fold(iv, &swapped));
                }
            }
        }
    }

    #[test]
    fn chain_state_position_advances() {
        let s = ChainState::new(Algorithm::D16.standard_iv());
        let (_, s) = chain_step(&s, b"a");
        let (d, s) = chain_step(&s, b"b");
        assert_eq!(s.position(), 2);
        assert_eq!(s.iv(), d);
    }

    #[test]
    fn mlhc_single_unit_unrolls() {
        for alg in Algorithm::ALL {
            let iv = alg.standard_iv();
            let state = MlhcState::new(iv, iv);
            let (inner, outer, _) = mlhc_step(&state, b"W1");
            let expect_inner = digest(alg, &[iv.as_bytes(), b"W1"].concat());
            let expect_outer = digest(alg, &[iv.as_bytes(), expect_inner.as_bytes()].concat());
            assert_eq!(inner, expect_inner);
            assert_eq!(outer, expect_outer);
        }
    }

    #[test]
    fn mlhc_layer_separation() {
        let alg = Algorithm::D20;
        let st = alg.standard_iv();
        let units = [b"u1".to_vec(), b"u2".to_vec(), b"u3".to_vec()];
        let run = |sec: Digest| {
            let mut s = MlhcState::new(st, sec);
            let mut out = vec![];
            for u in &units {
                let (i, o, n) = mlhc_step(&s, u);
                out.push((i, o));
                s = n;
            }
            out
        };
        let a = run(digest(alg, b"secret-a"));
        let b = run(digest(alg, b"secret-b"));
        for ((ia, oa), (ib, ob)) in a.iter().zip(b.iter()) {
            assert_eq!(ia, ib);
            assert_ne!(oa, ob);
        }
    }

    #[test]
    fn mlhc_three_units_match_nested_formula() {
        let alg = Algorithm::D16;
        let st = alg.standard_iv();
        let sec = digest(alg, b"IV_sec");
        let w = [b"W_1".to_vec(), b"W_2".to_vec(), b"W_3".to_vec()];
        let h = |iv: &[u8], m: &[u8]| digest(alg, &[iv, m].concat());
        // H'_3 = h(h(h(IV_st, W1), W2), W3); H_3 = h(h(h(IV_sec, H'_1), H'_2), H'_3)
        let i1 = h(st.as_bytes(), &w[0]);
        let i2 = h(i1.as_bytes(), &w[1]);
        let i3 = h(i2.as_bytes(), &w[2]);
        let o1 = h(sec.as_bytes(), i1.as_bytes());
        let o2 = h(o1.as_bytes(), i2.as_bytes());
        let o3 = h(o2.as_bytes(), i3.as_bytes());

        let mut s = MlhcState::new(st, sec);
        let mut last = (Digest::zero(alg), Digest::zero(alg));
        for u in &w {
            let (i, o, n) = mlhc_step(&s, u);
            last = (i, o);
            s = n;
        }
        assert_eq!(last, (i3, o3));
        assert_eq!(mlhc_outer_from_inner(sec, &[i1, i2, i3]), vec![o1, o2, o3]);
    }

    #[test]
    fn xor_identities() {
        let alg = Algorithm::D20;
        let a = digest(alg, b"a");
        let b = digest(alg, b"b");
        let c = digest(alg, b"c");
        assert!(xor_digests([&a, &a]).unwrap().is_zero());
        assert_eq!(xor_digests([&a]).unwrap(), a);
        let abc = xor_digests([&a, &b, &c]).unwrap();
        assert_eq!(xor_digests([&abc, &a, &b]).unwrap(), c);
        assert_eq!(xor_digests(std::iter::empty()), Err(ChainError::EmptyList));
        let m = digest(Algorithm::D16, b"a");
        assert!(matches!(
            xor_digests([&a, &m]),
            Err(ChainError::AlgorithmMismatch(..))
        ));
    }

    fn arb_digest(alg: Algorithm) -> impl Strategy<Value = Digest> {
        proptest::collection::vec(any::<u8>(), alg.len())
            .prop_map(move |v| Digest::from_slice(alg, &v).unwrap())
    }

    proptest! {
        #[test]
        fn xor_is_abelian(a in arb_digest(Algorithm::D20), b in arb_digest(Algorithm::D20), c in arb_digest(Algorithm::D20)) {
            prop_assert_eq!(a.xor(&b).unwrap(), b.xor(&a).unwrap());
            prop_assert_eq!(a.xor(&b).unwrap().xor(&c).unwrap(), a.xor(&b.xor(&c).unwrap()).unwrap());
            prop_assert!(a.xor(&a).unwrap().is_zero());
            prop_assert_eq!(a.xor(&Digest::zero(Algorithm::D20)).unwrap(), a);
        }

        #[test]
        fn earlier_change_alters_every_later_link(units in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 1..64), 2..6), pos in 0usize..5) {
            let pos = pos % units.len();
            let iv = Algorithm::D16.standard_iv();
            let mut altered = units.clone();
            altered[pos][0] ^= 0x80;
            let walk = |us: &[Vec<u8>]| {
                let mut s = ChainState::new(iv);
                us.iter().map(|u| { let (d, n) = chain_step(&s, u); s = n; d }).collect::<Vec<_>>()
            };
            let a = walk(&units);
            let b = walk(&altered);
            for i in 0..units.len() {
                if i < pos { prop_assert_eq!(a[i], b[i]); } else { prop_assert_ne!(a[i], b[i]); }
            }
        }
    }
}
