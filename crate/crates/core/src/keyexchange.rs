//! Elliptic-curve key agreement, identity-based private-key extraction and
//! sealed IV delivery.
//!
//! This demonstrates the message flow only. The arithmetic is not constant
//! time and the 128-bit profile carries no security claim.

use std::fmt;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{Rng, RngCore};
use thiserror::Error;

use crate::hashchain::{digest, digest_parts, keyed_digest, Algorithm, Digest};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KeyError {
    #[error("point is not on the curve")]
    InvalidPoint,
    #[error("secret must lie in [1, order)")]
    InvalidSecret,
    #[error("shared point is the point at infinity")]
    DegenerateKey,
    #[error("no curve point found for identity within {0} attempts")]
    MapFailure(u32),
    #[error("authentication tag mismatch")]
    OpenFailure,
    #[error("curve parameters are invalid: {0}")]
    InvalidCurve(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Point {
    Infinity,
    Affine { x: BigUint, y: BigUint },
}

impl Point {
    pub fn is_infinity(&self) -> bool {
        matches!(self, Point::Infinity)
    }

    pub fn x(&self) -> Option<&BigUint> {
        match self {
            Point::Infinity => None,
            Point::Affine { x, .. } => Some(x),
        }
    }

    pub fn y(&self) -> Option<&BigUint> {
        match self {
            Point::Infinity => None,
            Point::Affine { y, .. } => Some(y),
        }
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Point::Infinity => f.write_str("O"),
            Point::Affine { x, y } => write!(f, "({x:#x}, {y:#x})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Toy,
    Full,
}

impl Profile {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "toy" => Some(Profile::Toy),
            "full" => Some(Profile::Full),
            _ => None,
        }
    }

    pub fn curve(self) -> Curve {
        match self {
            Profile::Toy => Curve::toy(),
            Profile::Full => Curve::secp128r1(),
        }
    }
}

/// `y^2 = x^3 + a x + b (mod p)` with base point `g` of order `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Curve {
    pub name: &'static str,
    pub p: BigUint,
    pub a: BigUint,
    pub b: BigUint,
    pub g: Point,
    pub n: BigUint,
}

fn hex(s: &str) -> BigUint {
    BigUint::parse_bytes(s.as_bytes(), 16).expect("valid hex constant")
}

impl Curve {
    pub fn new(
        name: &'static str,
        p: BigUint,
        a: BigUint,
        b: BigUint,
        gx: BigUint,
        gy: BigUint,
        n: BigUint,
    ) -> Result<Curve, KeyError> {
        let four = BigUint::from(4u32);
        let disc = (&four * a.modpow(&BigUint::from(3u32), &p) + BigUint::from(27u32) * (&b * &b)) % &p;
        if disc.is_zero() {
            return Err(KeyError::InvalidCurve("singular"));
        }
        let mut c = Curve {
            name,
            p,
            a,
            b,
            g: Point::Infinity,
            n,
        };
        c.g = c.point(gx, gy)?;
        Ok(c)
    }

    /// `y^2 = x^3 + x + 4` over GF(97); the group has prime order 89.
    pub fn toy() -> Curve {
        Curve::new(
            "toy-97",
            97u32.into(),
            1u32.into(),
            4u32.into(),
            0u32.into(),
            2u32.into(),
            89u32.into(),
        )
        .expect("toy curve constants")
    }

    /// SEC 2 secp128r1.
    pub fn secp128r1() -> Curve {
        Curve::new(
            "secp128r1",
            hex("FFFFFFFDFFFFFFFFFFFFFFFFFFFFFFFF"),
            hex("FFFFFFFDFFFFFFFFFFFFFFFFFFFFFFFC"),
            hex("E87579C11079F43DD824993C2CEE5ED3"),
            hex("161FF7528B899B2D0C28607CA52C5B86"),
            hex("CF5AC8395BAFEB13C02DA292DDED7A83"),
            hex("FFFFFFFE0000000075A30D1B9038A115"),
        )
        .expect("secp128r1 constants")
    }

    /// Octets of a field element.
    pub fn byte_len(&self) -> usize {
        (self.p.bits() as usize).div_ceil(8)
    }

    fn rhs(&self, x: &BigUint) -> BigUint {
        (x * x * x + &self.a * x + &self.b) % &self.p
    }

    pub fn is_on_curve(&self, pt: &Point) -> bool {
        match pt {
            Point::Infinity => true,
            Point::Affine { x, y } => x < &self.p && y < &self.p && (y * y) % &self.p == self.rhs(x),
        }
    }

    pub fn point(&self, x: BigUint, y: BigUint) -> Result<Point, KeyError> {
        let pt = Point::Affine { x, y };
        if self.is_on_curve(&pt) {
            Ok(pt)
        } else {
            Err(KeyError::InvalidPoint)
        }
    }

    fn sub(&self, a: &BigUint, b: &BigUint) -> BigUint {
        ((a % &self.p) + &self.p - (b % &self.p)) % &self.p
    }

    fn inv(&self, a: &BigUint) -> BigUint {
        // p is prime
        a.modpow(&(&self.p - 2u32), &self.p)
    }

    pub fn neg(&self, pt: &Point) -> Point {
        match pt {
            Point::Infinity => Point::Infinity,
            Point::Affine { x, y } => Point::Affine {
                x: x.clone(),
                y: self.sub(&BigUint::zero(), y),
            },
        }
    }

    pub fn add(&self, p1: &Point, p2: &Point) -> Result<Point, KeyError> {
        if !self.is_on_curve(p1) || !self.is_on_curve(p2) {
            return Err(KeyError::InvalidPoint);
        }
        Ok(self.add_unchecked(p1, p2))
    }

    fn add_unchecked(&self, p1: &Point, p2: &Point) -> Point {
        let (x1, y1, x2, y2) = match (p1, p2) {
            (Point::Infinity, q) | (q, Point::Infinity) => return q.clone(),
            (Point::Affine { x: x1, y: y1 }, Point::Affine { x: x2, y: y2 }) => (x1, y1, x2, y2),
        };
        let p = &self.p;
        let lambda = if x1 == x2 {
            if ((y1 + y2) % p).is_zero() {
                return Point::Infinity;
            }
            let num = (BigUint::from(3u32) * x1 * x1 + &self.a) % p;
            num * self.inv(&((BigUint::from(2u32) * y1) % p)) % p
        } else {
            self.sub(y2, y1) * self.inv(&self.sub(x2, x1)) % p
        };
        let x3 = self.sub(&self.sub(&(&lambda * &lambda), x1), x2);
        let y3 = self.sub(&(&lambda * self.sub(x1, &x3)), y1);
        Point::Affine { x: x3, y: y3 }
    }

    /// Double-and-add.
    pub fn mul(&self, k: &BigUint, pt: &Point) -> Result<Point, KeyError> {
        if !self.is_on_curve(pt) {
            return Err(KeyError::InvalidPoint);
        }
        let mut acc = Point::Infinity;
        for i in (0..k.bits()).rev() {
            acc = self.add_unchecked(&acc, &acc);
            if k.bit(i) {
                acc = self.add_unchecked(&acc, pt);
            }
        }
        Ok(acc)
    }

    /// Field element as fixed-width big-endian octets.
    pub fn encode(&self, v: &BigUint) -> Vec<u8> {
        let raw = v.to_bytes_be();
        let mut out = vec![0u8; self.byte_len().saturating_sub(raw.len())];
        out.extend_from_slice(&raw);
        out
    }

    /// Uniform secret in `[2, n)`.
    pub fn random_secret<R: RngCore>(&self, rng: &mut R) -> BigUint {
        let mut bytes = vec![0u8; self.n.bits().div_ceil(8) as usize + 8];
        rng.fill_bytes(&mut bytes);
        BigUint::from_bytes_be(&bytes) % (&self.n - 2u32) + 2u32
    }

    fn check_secret(&self, s: &BigUint) -> Result<(), KeyError> {
        if s.is_zero() || s >= &self.n {
            Err(KeyError::InvalidSecret)
        } else {
            Ok(())
        }
    }

    pub fn public_point(&self, secret: &BigUint) -> Result<Point, KeyError> {
        self.check_secret(secret)?;
        self.mul(secret, &self.g)
    }
}

/// Square root modulo an odd prime (Tonelli-Shanks).
pub fn sqrt_mod(a: &BigUint, p: &BigUint) -> Option<BigUint> {
    let a = a % p;
    if a.is_zero() {
        return Some(a);
    }
    let one = BigUint::one();
    let pm1 = p - 1u32;
    if a.modpow(&(&pm1 >> 1), p) != one {
        return None;
    }
    let mut q = pm1.clone();
    let mut s = 0u32;
    while q.is_even() {
        q >>= 1;
        s += 1;
    }
    if s == 1 {
        return Some(a.modpow(&((p + 1u32) >> 2), p));
    }
    let mut z = BigUint::from(2u32);
    while z.modpow(&(&pm1 >> 1), p) == one {
        z += 1u32;
    }
    let mut m = s;
    let mut c = z.modpow(&q, p);
    let mut t = a.modpow(&q, p);
    let mut r = a.modpow(&((&q + 1u32) >> 1), p);
    while t != one {
        let mut i = 0u32;
        let mut t2 = t.clone();
        while t2 != one {
            t2 = &t2 * &t2 % p;
            i += 1;
        }
        let b = c.modpow(&(BigUint::one() << (m - i - 1)), p);
        m = i;
        c = &b * &b % p;
        t = t * &c % p;
        r = r * b % p;
    }
    Some(r)
}

pub const MAP_ATTEMPTS: u32 = 1000;

/// Hash an identity onto the curve: digest `identity || counter`, reduce to
/// an abscissa and take the smaller root, bumping the counter until the
/// right-hand side is a square.
pub fn map_to_point(identity: &str, curve: &Curve) -> Result<Point, KeyError> {
    for counter in 0..MAP_ATTEMPTS {
        let h = digest_parts(
            Algorithm::D20,
            [identity.as_bytes(), &counter.to_be_bytes()[..]],
        );
        let x = BigUint::from_bytes_be(h.as_bytes()) % &curve.p;
        if let Some(y) = sqrt_mod(&curve.rhs(&x), &curve.p) {
            let other = curve.sub(&BigUint::zero(), &y);
            let y = y.min(other);
            return curve.point(x, y);
        }
    }
    Err(KeyError::MapFailure(MAP_ATTEMPTS))
}

/// `K_priv = s * MTP(identity)`.
pub fn pkg_extract(identity: &str, pkg_secret: &BigUint, curve: &Curve) -> Result<Point, KeyError> {
    curve.check_secret(pkg_secret)?;
    curve.mul(pkg_secret, &map_to_point(identity, curve)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DhResult {
    pub x_pub: Point,
    pub y_pub: Point,
    pub z: Point,
    pub ks_server: Vec<u8>,
    pub ks_client: Vec<u8>,
}

/// `Z = S_x * Y = S_y * X`; the shared key is `z_x` in fixed width.
pub fn dh_exchange(s_x: &BigUint, s_y: &BigUint, curve: &Curve) -> Result<DhResult, KeyError> {
    let x_pub = curve.public_point(s_x)?;
    let y_pub = curve.public_point(s_y)?;
    let z_server = curve.mul(s_x, &y_pub)?;
    let ks_server = shared_key(curve, s_x, &y_pub)?;
    let ks_client = shared_key(curve, s_y, &x_pub)?;
    Ok(DhResult {
        x_pub,
        y_pub,
        z: z_server,
        ks_server,
        ks_client,
    })
}

/// One side's view: `secret * peer`, rejecting a peer point off the curve.
pub fn shared_key(curve: &Curve, secret: &BigUint, peer: &Point) -> Result<Vec<u8>, KeyError> {
    if peer.is_infinity() || !curve.is_on_curve(peer) {
        return Err(KeyError::InvalidPoint);
    }
    let z = curve.mul(secret, peer)?;
    z.x().map(|x| curve.encode(x)).ok_or(KeyError::DegenerateKey)
}

const SEAL_ALG: Algorithm = Algorithm::D20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sealed {
    pub nonce: [u8; 8],
    pub body: Vec<u8>,
    pub tag: Digest,
}

impl Sealed {
    /// `nonce || body`; the tag travels alongside.
    pub fn ciphertext(&self) -> Vec<u8> {
        [&self.nonce[..], &self.body].concat()
    }
}

fn keystream(ks: &[u8], nonce: &[u8; 8], len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len + SEAL_ALG.len());
    let mut counter = 0u32;
    while out.len() < len {
        let block = digest_parts(SEAL_ALG, [ks, &nonce[..], &counter.to_be_bytes()[..]]);
        out.extend_from_slice(block.as_bytes());
        counter += 1;
    }
    out.truncate(len);
    out
}

fn tag(ks: &[u8], nonce: &[u8; 8], body: &[u8]) -> Digest {
    keyed_digest(SEAL_ALG, ks, &[&nonce[..], body].concat())
}

pub fn seal_bytes(plain: &[u8], ks: &[u8], nonce: u64) -> Sealed {
    let nonce = nonce.to_be_bytes();
    let body: Vec<u8> = plain
        .iter()
        .zip(keystream(ks, &nonce, plain.len()))
        .map(|(a, b)| a ^ b)
        .collect();
    let tag = tag(ks, &nonce, &body);
    Sealed { nonce, body, tag }
}

pub fn open_bytes(sealed: &Sealed, ks: &[u8]) -> Result<Vec<u8>, KeyError> {
    if tag(ks, &sealed.nonce, &sealed.body) != sealed.tag {
        return Err(KeyError::OpenFailure);
    }
    Ok(sealed
        .body
        .iter()
        .zip(keystream(ks, &sealed.nonce, sealed.body.len()))
        .map(|(a, b)| a ^ b)
        .collect())
}

pub fn seal_iv(iv: &Digest, ks: &[u8], nonce: u64) -> Sealed {
    seal_bytes(iv.as_bytes(), ks, nonce)
}

pub fn open_iv(sealed: &Sealed, ks: &[u8], algorithm: Algorithm) -> Result<Digest, KeyError> {
    let plain = open_bytes(sealed, ks)?;
    Digest::from_slice(algorithm, &plain).map_err(|_| KeyError::OpenFailure)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyMaterial {
    pub ks: Vec<u8>,
    pub k_priv: Point,
    pub iv_sec: Digest,
}

impl KeyMaterial {
    /// Stand-in signing key: digest of `K_priv`'s coordinates.
    pub fn signing_key(&self, curve: &Curve, algorithm: Algorithm) -> Vec<u8> {
        let mut buf = Vec::new();
        if let Point::Affine { x, y } = &self.k_priv {
            buf.extend(curve.encode(x));
            buf.extend(curve.encode(y));
        }
        digest(algorithm, &buf).as_bytes().to_vec()
    }

    pub fn session_keys(&self, curve: &Curve, algorithm: Algorithm) -> crate::strategies::SessionKeys {
        crate::strategies::SessionKeys::keyed(algorithm, self.iv_sec, self.signing_key(curve, algorithm))
    }
}

/// One run of the server/client exchange, as both sides see it.
#[derive(Debug, Clone)]
pub struct Exchange {
    pub curve: Curve,
    pub identity: String,
    pub dh: DhResult,
    pub p_pub: Point,
    pub sealed_k_priv: Sealed,
    pub sealed_iv: Sealed,
    /// What the client holds after opening both messages.
    pub client: KeyMaterial,
    pub server: KeyMaterial,
}

impl Exchange {
    pub fn transcript(&self) -> Vec<String> {
        let c = &self.curve;
        vec![
            format!(
                "server -> client: E = {} (p = {:#x}, A = {:#x}, B = {:#x})",
                c.name, c.p, c.a, c.b
            ),
            format!("server -> client: P = {}", c.g),
            format!("server -> client: X = {}", self.dh.x_pub),
            format!("client -> server: Y = {}", self.dh.y_pub),
            format!("server: ks = {}", hex::encode(&self.dh.ks_server)),
            format!("client: ks = {}", hex::encode(&self.dh.ks_client)),
            format!("server: P_pub = {}", self.p_pub),
            format!(
                "server -> client: E_ks(K_priv) = {} tag {}",
                hex::encode(self.sealed_k_priv.ciphertext()),
                self.sealed_k_priv.tag
            ),
            format!(
                "server -> client: E_ks(IV) = {} tag {}",
                hex::encode(self.sealed_iv.ciphertext()),
                self.sealed_iv.tag
            ),
            format!("client: K_priv = {}", self.client.k_priv),
            format!("client: IV = {}", self.client.iv_sec),
        ]
    }
}

/// Full exchange with fresh secrets. A degenerate shared point is retried.
pub fn run_exchange<R: Rng>(
    curve: &Curve,
    identity: &str,
    iv_sec: &Digest,
    rng: &mut R,
) -> Result<Exchange, KeyError> {
    let dh = loop {
        let s_x = curve.random_secret(rng);
        let s_y = curve.random_secret(rng);
        match dh_exchange(&s_x, &s_y, curve) {
            Err(KeyError::DegenerateKey) => continue,
            other => break other?,
        }
    };
    let pkg_secret = curve.random_secret(rng);
    let p_pub = curve.public_point(&pkg_secret)?;
    let k_priv = pkg_extract(identity, &pkg_secret, curve)?;
    let mut kp = Vec::new();
    if let Point::Affine { x, y } = &k_priv {
        kp.extend(curve.encode(x));
        kp.extend(curve.encode(y));
    }
    let nonce: u64 = rng.gen();
    let sealed_k_priv = seal_bytes(&kp, &dh.ks_server, nonce);
    let sealed_iv = seal_iv(iv_sec, &dh.ks_server, nonce.wrapping_add(1));

    let opened = open_bytes(&sealed_k_priv, &dh.ks_client)?;
    let w = curve.byte_len();
    let client_k_priv = if opened.is_empty() {
        Point::Infinity
    } else {
        curve.point(
            BigUint::from_bytes_be(&opened[..w]),
            BigUint::from_bytes_be(&opened[w..]),
        )?
    };
    let client_iv = open_iv(&sealed_iv, &dh.ks_client, iv_sec.algorithm())?;
    let server = KeyMaterial {
        ks: dh.ks_server.clone(),
        k_priv,
        iv_sec: *iv_sec,
    };
    let client = KeyMaterial {
        ks: dh.ks_client.clone(),
        k_priv: client_k_priv,
        iv_sec: client_iv,
    };
    Ok(Exchange {
        curve: curve.clone(),
        identity: identity.to_string(),
        dh,
        p_pub,
        sealed_k_priv,
        sealed_iv,
        client,
        server,
    })
}
