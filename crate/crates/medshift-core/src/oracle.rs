//! Exact enumeration oracle over small discrete laws.
//!
//! A `DiscreteLaw` factorizes as `p(w) g(a|w) p(z|a,w) r(m|a,z,w)
//! p(l|a,z,m,w) b(y|a,z,m,l,w)` with a discrete baseline confounder, binary
//! exposure, binary ancestor and descendant mediator bits, a binary
//! mediator of interest, and a binary outcome. Every estimand, nuisance
//! function, and influence-function expectation can then be computed by
//! exhaustive summation, providing ground truth for the estimation
//! pipeline. Arbitrary subsets of the nuisances can be replaced by
//! deterministically corrupted values, and the resulting bias of the
//! estimating equation is likewise available in closed form.
//!
//! Arm coding: exposure value 1.0 is the exposed arm (a'), 0.0 the
//! reference arm (a*). The exposure axis of every table is indexed with
//! 0 = a*, 1 = a'.

use crate::data::{ArmSpec, EstimandKind, EstimandSpec, MediatorPartition, ObservationTable};
use crate::error::{Error, Result};
use crate::math::{self, KahanSum};
use crate::nuisance::NuisanceSet;
use alloc::vec::Vec;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A fully specified discrete law. All probability tables are flat,
/// row-major over the axes noted in each field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLaw {
    /// Marginal of the confounder level; length `nw`.
    pub p_w: Vec<f64>,
    /// P(A = a' | w); length `nw`.
    pub g: Vec<f64>,
    /// P(Z = zcfg | a, w); axes [a][w][zcfg], zcfg little-endian bits.
    pub pz: Vec<f64>,
    /// P(M_k = 1 | a, w, zcfg); axes [a][w][zcfg].
    pub r: Vec<f64>,
    /// P(L = lcfg | a, w, zcfg, m); axes [a][w][zcfg][m][lcfg].
    pub pl: Vec<f64>,
    /// E(Y | a, w, zcfg, m, lcfg) (a probability for binary Y); same axes
    /// as `pl`.
    pub b: Vec<f64>,
    /// Number of ancestor mediator bits.
    pub nz: usize,
    /// Number of descendant mediator bits.
    pub nl: usize,
}

/// Which nuisances to replace with deterministically wrong values.
///
/// The functional `s` is not a free parameter: it is tied to the outcome
/// regression, the shifted mediator density, and a descendant density by
/// the identity `s = ∫ b q p(l|·)` that the multiple-robustness argument
/// exploits. The injected `s` is therefore always derived from the
/// scenario's (possibly corrupted) `b` and `q`, together with a descendant
/// density shared with the injected `lmean`; flagging `s` replaces that
/// shared density with a deterministically tilted wrong one. The
/// projections `u` and `v` enter the influence function only through
/// differences that the argument cancels directly, so they are corrupted
/// freely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Corruption {
    pub b: bool,
    pub g: bool,
    pub q: bool,
    pub r: bool,
    pub s: bool,
    pub u: bool,
    pub v: bool,
    /// Joint-shift channel: the exposure classifier ratio.
    pub ratio: bool,
    /// Joint-shift channel: the baseline projection u(a*, w).
    pub u_all: bool,
}

impl Corruption {
    pub fn none() -> Self {
        Corruption::default()
    }

    pub fn everything() -> Self {
        Corruption {
            b: true,
            g: true,
            q: true,
            r: true,
            s: true,
            u: true,
            v: true,
            ratio: true,
            u_all: true,
        }
    }

    pub fn any(&self) -> bool {
        self.b || self.g || self.q || self.r || self.s || self.u || self.v || self.ratio || self.u_all
    }
}

/// Deterministic corruption of a probability: a fixed shift on the logit
/// scale.
pub fn corrupt_prob(p: f64) -> f64 {
    let p = math::clamp(p, 1e-12, 1.0 - 1e-12);
    math::expit(math::logit(p) + 0.7)
}

/// Deterministic corruption of a bounded functional value.
pub fn corrupt_val(x: f64) -> f64 {
    0.85 * x + 0.07
}

impl DiscreteLaw {
    pub fn nw(&self) -> usize {
        self.p_w.len()
    }

    pub fn nzc(&self) -> usize {
        1 << self.nz
    }

    pub fn nlc(&self) -> usize {
        1 << self.nl
    }

    #[inline]
    fn zr_idx(&self, a: usize, w: usize, z: usize) -> usize {
        (a * self.nw() + w) * self.nzc() + z
    }

    #[inline]
    fn full_idx(&self, a: usize, w: usize, z: usize, m: usize, l: usize) -> usize {
        (((a * self.nw() + w) * self.nzc() + z) * 2 + m) * self.nlc() + l
    }

    /// P(A = a' | w).
    pub fn g1(&self, w: usize) -> f64 {
        self.g[w]
    }

    pub fn pz_at(&self, a: usize, w: usize, z: usize) -> f64 {
        self.pz[self.zr_idx(a, w, z)]
    }

    /// P(M_k = 1 | a, z, w).
    pub fn r1(&self, a: usize, w: usize, z: usize) -> f64 {
        self.r[self.zr_idx(a, w, z)]
    }

    pub fn pl_at(&self, a: usize, w: usize, z: usize, m: usize, l: usize) -> f64 {
        self.pl[self.full_idx(a, w, z, m, l)]
    }

    pub fn b_at(&self, a: usize, w: usize, z: usize, m: usize, l: usize) -> f64 {
        self.b[self.full_idx(a, w, z, m, l)]
    }

    /// Marginal mediator density q(M_k = 1 | a, w).
    pub fn q1(&self, a: usize, w: usize) -> f64 {
        let mut acc = KahanSum::new();
        for z in 0..self.nzc() {
            acc.add(self.pz_at(a, w, z) * self.r1(a, w, z));
        }
        acc.value()
    }

    fn prob(p1: f64, value: usize) -> f64 {
        if value == 1 {
            p1
        } else {
            1.0 - p1
        }
    }

    /// Joint mediator-vector probability p(z, m, l | a, w).
    pub fn p_joint_m(&self, a: usize, w: usize, z: usize, m: usize, l: usize) -> f64 {
        self.pz_at(a, w, z) * Self::prob(self.r1(a, w, z), m) * self.pl_at(a, w, z, m, l)
    }

    pub fn validate(&self) -> Result<()> {
        let nw = self.nw();
        let nzc = self.nzc();
        let nlc = self.nlc();
        if nw == 0 || nw > 4 {
            return Err(Error::Invalid("confounder must have 1..=4 levels".into()));
        }
        let expect_zr = 2 * nw * nzc;
        let expect_full = expect_zr * 2 * nlc;
        if self.g.len() != nw
            || self.pz.len() != expect_zr
            || self.r.len() != expect_zr
            || self.pl.len() != expect_full
            || self.b.len() != expect_full
        {
            return Err(Error::Invalid("law table lengths do not match the axes".into()));
        }
        let check_p = |v: f64, what: &str| -> Result<()> {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::Invalid(alloc::format!(
                    "{what} value {v} is not a probability"
                )));
            }
            Ok(())
        };
        let mut pw_sum = KahanSum::new();
        for &p in &self.p_w {
            check_p(p, "p_w")?;
            pw_sum.add(p);
        }
        if math::abs(pw_sum.value() - 1.0) > 1e-12 {
            return Err(Error::Invalid("confounder probabilities must sum to 1".into()));
        }
        for &p in self.g.iter().chain(&self.r).chain(&self.b) {
            check_p(p, "conditional probability")?;
        }
        for a in 0..2 {
            for w in 0..nw {
                let mut s = KahanSum::new();
                for z in 0..nzc {
                    check_p(self.pz_at(a, w, z), "pz")?;
                    s.add(self.pz_at(a, w, z));
                }
                if math::abs(s.value() - 1.0) > 1e-12 {
                    return Err(Error::Invalid("pz must sum to 1 over configurations".into()));
                }
                for z in 0..nzc {
                    for m in 0..2 {
                        let mut sl = KahanSum::new();
                        for l in 0..nlc {
                            check_p(self.pl_at(a, w, z, m, l), "pl")?;
                            sl.add(self.pl_at(a, w, z, m, l));
                        }
                        if math::abs(sl.value() - 1.0) > 1e-12 {
                            return Err(Error::Invalid(
                                "pl must sum to 1 over configurations".into(),
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// The canonical test fixture: one binary confounder, one ancestor bit,
    /// one descendant bit, linear-in-probability conditionals.
    pub fn canonical() -> Self {
        let nw = 2;
        let nz = 1;
        let nl = 1;
        let p_w = alloc::vec![0.6, 0.4];
        let mut g = Vec::new();
        for w in 0..nw {
            g.push(0.35 + 0.2 * w as f64);
        }
        let mut pz = Vec::new();
        let mut r = Vec::new();
        for a in 0..2usize {
            for w in 0..nw {
                let p1 = 0.3 + 0.25 * a as f64 + 0.15 * w as f64;
                // zcfg order: 0 then 1.
                pz.push(1.0 - p1);
                pz.push(p1);
            }
        }
        for a in 0..2usize {
            for w in 0..nw {
                for z in 0..2usize {
                    r.push(0.25 + 0.2 * a as f64 + 0.2 * z as f64 + 0.1 * w as f64);
                }
            }
        }
        let mut pl = Vec::new();
        let mut b = Vec::new();
        for a in 0..2usize {
            for w in 0..nw {
                for z in 0..2usize {
                    for m in 0..2usize {
                        let l1 = 0.2
                            + 0.15 * a as f64
                            + 0.2 * m as f64
                            + 0.1 * z as f64
                            + 0.1 * w as f64;
                        for l in 0..2usize {
                            pl.push(if l == 1 { l1 } else { 1.0 - l1 });
                            b.push(
                                0.15 + 0.1 * a as f64
                                    + 0.2 * m as f64
                                    + 0.15 * l as f64
                                    + 0.1 * z as f64
                                    + 0.1 * w as f64,
                            );
                        }
                    }
                }
            }
        }
        let law = DiscreteLaw {
            p_w,
            g,
            pz,
            r,
            pl,
            b,
            nz,
            nl,
        };
        debug_assert!(law.validate().is_ok());
        law
    }

    /// The mediator layout of sampled tables: ancestor bits, then the
    /// mediator of interest, then descendant bits.
    pub fn partition(&self) -> MediatorPartition {
        MediatorPartition {
            z_indices: (0..self.nz).collect(),
            k_index: self.nz,
            l_indices: (self.nz + 1..self.nz + 1 + self.nl).collect(),
        }
    }

    pub fn arms(&self) -> ArmSpec {
        ArmSpec {
            a_prime: 1.0,
            a_star: 0.0,
        }
    }

    pub fn estimand_spec(&self, kind: EstimandKind) -> EstimandSpec {
        match kind {
            EstimandKind::ThetaKPrime => EstimandSpec::theta_k_prime(self.partition(), self.arms()),
            EstimandKind::ThetaK => {
                EstimandSpec::theta_k(self.nz, self.nz + 1 + self.nl, self.arms())
            }
            EstimandKind::ThetaAll => EstimandSpec::theta_all(self.arms()),
        }
    }

    /// Draws `n` observations by inverse-CDF sampling in a fixed variable
    /// order; deterministic given the seed.
    pub fn sample(&self, n: usize, seed: u64) -> Result<ObservationTable> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = Vec::with_capacity(n);
        let mut a_col = Vec::with_capacity(n);
        let mut wcol = Vec::with_capacity(n);
        let n_med = self.nz + 1 + self.nl;
        let mut meds: Vec<Vec<f64>> = (0..n_med).map(|_| Vec::with_capacity(n)).collect();
        for _ in 0..n {
            let uw: f64 = rng.gen();
            let mut w = self.nw() - 1;
            let mut cum = 0.0;
            for (j, &p) in self.p_w.iter().enumerate() {
                cum += p;
                if uw < cum {
                    w = j;
                    break;
                }
            }
            let a = usize::from(rng.gen::<f64>() < self.g1(w));
            let uz: f64 = rng.gen();
            let mut z = self.nzc() - 1;
            let mut cum = 0.0;
            for zc in 0..self.nzc() {
                cum += self.pz_at(a, w, zc);
                if uz < cum {
                    z = zc;
                    break;
                }
            }
            let m = usize::from(rng.gen::<f64>() < self.r1(a, w, z));
            let ul: f64 = rng.gen();
            let mut l = self.nlc() - 1;
            let mut cum = 0.0;
            for lc in 0..self.nlc() {
                cum += self.pl_at(a, w, z, m, lc);
                if ul < cum {
                    l = lc;
                    break;
                }
            }
            let yi = usize::from(rng.gen::<f64>() < self.b_at(a, w, z, m, l));
            y.push(yi as f64);
            a_col.push(a as f64);
            wcol.push(w as f64);
            for bit in 0..self.nz {
                meds[bit].push(((z >> bit) & 1) as f64);
            }
            meds[self.nz].push(m as f64);
            for bit in 0..self.nl {
                meds[self.nz + 1 + bit].push(((l >> bit) & 1) as f64);
            }
        }
        ObservationTable::new(y, a_col, alloc::vec![wcol], meds)
    }

    // ----- exact functionals -------------------------------------------

    /// A deterministically tilted, wrong descendant density: weights each
    /// configuration by 1.7 per set bit and renormalizes.
    fn pl_wrong(&self, w: usize, z: usize, m: usize, l: usize) -> f64 {
        let tilt = |cfg: usize| {
            let mut t = 1.0f64;
            for _ in 0..cfg.count_ones() {
                t *= 1.7;
            }
            t
        };
        let mut norm = KahanSum::new();
        for lc in 0..self.nlc() {
            norm.add(self.pl_at(1, w, z, m, lc) * tilt(lc));
        }
        self.pl_at(1, w, z, m, l) * tilt(l) / norm.value()
    }

    /// Descendant density used inside the injected `s` and `lmean`: the
    /// truth unless `s` is flagged, in which case a tilted wrong density is
    /// shared by both so the injected pair stays internally coherent while
    /// missing the target.
    fn pl_inj(&self, c: Corruption, w: usize, z: usize, m: usize, l: usize) -> f64 {
        if c.s {
            self.pl_wrong(w, z, m, l)
        } else {
            self.pl_at(1, w, z, m, l)
        }
    }

    /// Injected lmean(a', z, m, w) under the scenario's outcome regression
    /// and descendant density.
    fn lmean_inj(&self, c: Corruption, w: usize, z: usize, m: usize) -> f64 {
        let mut acc = KahanSum::new();
        for l in 0..self.nlc() {
            let bv = if c.b {
                corrupt_prob(self.b_at(1, w, z, m, l))
            } else {
                self.b_at(1, w, z, m, l)
            };
            acc.add(self.pl_inj(c, w, z, m, l) * bv);
        }
        acc.value()
    }

    /// Injected s(a', z, w) for the flow-on estimand, derived from the
    /// scenario's `b`, `q`, and descendant density.
    fn s_inj(&self, c: Corruption, w: usize, z: usize) -> f64 {
        let q1s = if c.q {
            corrupt_prob(self.q1(0, w))
        } else {
            self.q1(0, w)
        };
        let mut acc = KahanSum::new();
        for m in 0..2 {
            acc.add(Self::prob(q1s, m) * self.lmean_inj(c, w, z, m));
        }
        acc.value()
    }

    /// Injected s(a', z, l, w) for the no-flow-on estimand; conditioning on
    /// the descendants leaves `b` and `q` as the only ingredients.
    fn s_k_inj(&self, c: Corruption, w: usize, z: usize, l: usize) -> f64 {
        let q1s = if c.q {
            corrupt_prob(self.q1(0, w))
        } else {
            self.q1(0, w)
        };
        let mut acc = KahanSum::new();
        for m in 0..2 {
            let bv = if c.b {
                corrupt_prob(self.b_at(1, w, z, m, l))
            } else {
                self.b_at(1, w, z, m, l)
            };
            acc.add(Self::prob(q1s, m) * bv);
        }
        acc.value()
    }

    /// True s(a', z, w) for the flow-on estimand.
    pub fn s_true(&self, w: usize, z: usize) -> f64 {
        let q1s = self.q1(0, w);
        let mut acc = KahanSum::new();
        for m in 0..2 {
            let qm = Self::prob(q1s, m);
            for l in 0..self.nlc() {
                acc.add(qm * self.pl_at(1, w, z, m, l) * self.b_at(1, w, z, m, l));
            }
        }
        acc.value()
    }

    /// True u(a', m, w) for the flow-on estimand.
    pub fn u_true(&self, w: usize, m: usize) -> f64 {
        let mut acc = KahanSum::new();
        for z in 0..self.nzc() {
            for l in 0..self.nlc() {
                acc.add(self.pz_at(1, w, z) * self.pl_at(1, w, z, m, l) * self.b_at(1, w, z, m, l));
            }
        }
        acc.value()
    }

    /// True v(a', w) for the flow-on estimand.
    pub fn v_true(&self, w: usize) -> f64 {
        let q1s = self.q1(0, w);
        q1s * self.u_true(w, 1) + (1.0 - q1s) * self.u_true(w, 0)
    }

    /// Joint probability of the non-target mediators, p(z, l | a, w),
    /// marginalized over the mediator of interest.
    pub fn p_others(&self, a: usize, w: usize, z: usize, l: usize) -> f64 {
        let mut acc = KahanSum::new();
        for m in 0..2 {
            acc.add(self.p_joint_m(a, w, z, m, l));
        }
        acc.value()
    }

    /// True conditional density of the target mediator given all other
    /// mediators: p(m | a, z, l, w) (the no-flow-on analogue of r).
    pub fn r_k_true(&self, a: usize, w: usize, z: usize, l: usize) -> f64 {
        let joint1 = self.p_joint_m(a, w, z, 1, l);
        joint1 / self.p_others(a, w, z, l)
    }

    /// True s for the no-flow-on estimand, conditional on (z, l).
    pub fn s_k_true(&self, w: usize, z: usize, l: usize) -> f64 {
        let q1s = self.q1(0, w);
        q1s * self.b_at(1, w, z, 1, l) + (1.0 - q1s) * self.b_at(1, w, z, 0, l)
    }

    /// True u for the no-flow-on estimand.
    pub fn u_k_true(&self, w: usize, m: usize) -> f64 {
        let mut acc = KahanSum::new();
        for z in 0..self.nzc() {
            for l in 0..self.nlc() {
                acc.add(self.p_others(1, w, z, l) * self.b_at(1, w, z, m, l));
            }
        }
        acc.value()
    }

    pub fn v_k_true(&self, w: usize) -> f64 {
        let q1s = self.q1(0, w);
        q1s * self.u_k_true(w, 1) + (1.0 - q1s) * self.u_k_true(w, 0)
    }

    /// True classifier ratio p(a* | m-vector, w) / p(a' | m-vector, w).
    pub fn ratio_true(&self, w: usize, z: usize, m: usize, l: usize) -> f64 {
        let g1 = self.g1(w);
        ((1.0 - g1) * self.p_joint_m(0, w, z, m, l)) / (g1 * self.p_joint_m(1, w, z, m, l))
    }

    /// True u(a*, w) for the joint-shift estimand.
    pub fn u_all_true(&self, w: usize) -> f64 {
        let mut acc = KahanSum::new();
        for z in 0..self.nzc() {
            for m in 0..2 {
                for l in 0..self.nlc() {
                    acc.add(self.p_joint_m(0, w, z, m, l) * self.b_at(1, w, z, m, l));
                }
            }
        }
        acc.value()
    }

    /// Exact estimand value by direct enumeration of the identification
    /// formula.
    pub fn exact_theta(&self, kind: EstimandKind) -> f64 {
        let mut acc = KahanSum::new();
        for w in 0..self.nw() {
            let pw = self.p_w[w];
            let val = match kind {
                EstimandKind::ThetaKPrime => self.v_true(w),
                EstimandKind::ThetaK => self.v_k_true(w),
                EstimandKind::ThetaAll => self.u_all_true(w),
            };
            acc.add(pw * val);
        }
        acc.value()
    }

    /// Exact estimand value by an independent route: the expectation of the
    /// uncentered efficient influence function with true nuisances, which
    /// exercises the inverse-weighted representation instead of the
    /// g-formula factorization.
    pub fn exact_theta_alt(&self, kind: EstimandKind) -> f64 {
        self.expected_one_step(kind, Corruption::none())
    }

    /// Exact E(Y_{a'}).
    pub fn exact_ey_aprime(&self) -> f64 {
        let mut acc = KahanSum::new();
        for w in 0..self.nw() {
            for z in 0..self.nzc() {
                for m in 0..2 {
                    for l in 0..self.nlc() {
                        acc.add(self.p_w[w] * self.p_joint_m(1, w, z, m, l) * self.b_at(1, w, z, m, l));
                    }
                }
            }
        }
        acc.value()
    }

    /// The expectation of the uncentered influence function when the given
    /// nuisances are replaced by corrupted values. With no corruption this
    /// equals the estimand; the gap from the true estimand otherwise is the
    /// exact asymptotic bias of the one-step estimator.
    pub fn expected_one_step(&self, kind: EstimandKind, c: Corruption) -> f64 {
        let mut acc = KahanSum::new();
        for w in 0..self.nw() {
            for a in 0..2usize {
                let pa = if a == 1 { self.g1(w) } else { 1.0 - self.g1(w) };
                for z in 0..self.nzc() {
                    for m in 0..2usize {
                        for l in 0..self.nlc() {
                            let p_obs = self.p_w[w] * pa * self.p_joint_m(a, w, z, m, l);
                            if p_obs == 0.0 {
                                continue;
                            }
                            let d = self.uncentered_d(kind, c, a, w, z, m, l);
                            acc.add(p_obs * d);
                        }
                    }
                }
            }
        }
        acc.value()
    }

    /// Exact variance of the (centered) efficient influence function with
    /// true nuisances — the nonparametric efficiency bound.
    pub fn exact_var_dp(&self, kind: EstimandKind) -> f64 {
        let theta = self.exact_theta(kind);
        let c = Corruption::none();
        let mut acc = KahanSum::new();
        for w in 0..self.nw() {
            for a in 0..2usize {
                let pa = if a == 1 { self.g1(w) } else { 1.0 - self.g1(w) };
                for z in 0..self.nzc() {
                    for m in 0..2usize {
                        for l in 0..self.nlc() {
                            let p_obs = self.p_w[w] * pa * self.p_joint_m(a, w, z, m, l);
                            if p_obs == 0.0 {
                                continue;
                            }
                            // D is linear in y; evaluate at both outcomes.
                            let b = self.b_at(a, w, z, m, l);
                            for yv in 0..2usize {
                                let py = if yv == 1 { b } else { 1.0 - b };
                                let d = self.uncentered_d_y(kind, c, a, w, z, m, l, yv as f64)
                                    - theta;
                                acc.add(p_obs * py * d * d);
                            }
                        }
                    }
                }
            }
        }
        acc.value()
    }

    /// Uncentered influence function at a configuration, with the outcome
    /// integrated out (y replaced by its conditional mean under the truth).
    fn uncentered_d(
        &self,
        kind: EstimandKind,
        c: Corruption,
        a: usize,
        w: usize,
        z: usize,
        m: usize,
        l: usize,
    ) -> f64 {
        self.uncentered_d_y(kind, c, a, w, z, m, l, self.b_at(a, w, z, m, l))
    }

    #[allow(clippy::too_many_arguments)]
    fn uncentered_d_y(
        &self,
        kind: EstimandKind,
        c: Corruption,
        a: usize,
        w: usize,
        z: usize,
        m: usize,
        l: usize,
        y: f64,
    ) -> f64 {
        let cp = |p: f64, on: bool| if on { corrupt_prob(p) } else { p };
        let cv = |x: f64, on: bool| if on { corrupt_val(x) } else { x };
        let g1 = cp(self.g1(w), c.g);
        let b_inj =
            |a: usize, w: usize, z: usize, m: usize, l: usize| cp(self.b_at(a, w, z, m, l), c.b);
        match kind {
            EstimandKind::ThetaKPrime => {
                let q1s = cp(self.q1(0, w), c.q);
                let r1 = cp(self.r1(1, w, z), c.r);
                let q_obs = Self::prob(q1s, m);
                let r_obs = Self::prob(r1, m);
                let s_v = self.s_inj(c, w, z);
                let u1 = cv(self.u_true(w, 1), c.u);
                let u0 = cv(self.u_true(w, 0), c.u);
                let v_v = cv(self.v_true(w), c.v);
                let bv = b_inj(1, w, z, m, l);
                let lmean = self.lmean_inj(c, w, z, m);
                let mut d = v_v;
                if a == 1 {
                    let wy = q_obs / (g1 * r_obs);
                    d += wy * (y - bv);
                    d += (s_v - v_v) / g1;
                    d += wy * (bv - lmean);
                } else {
                    d += (u1 - u0) * (m as f64 - q1s) / (1.0 - g1);
                }
                d
            }
            EstimandKind::ThetaK => {
                let q1s = cp(self.q1(0, w), c.q);
                let r1 = cp(self.r_k_true(1, w, z, l), c.r);
                let q_obs = Self::prob(q1s, m);
                let r_obs = Self::prob(r1, m);
                let s_v = self.s_k_inj(c, w, z, l);
                let u1 = cv(self.u_k_true(w, 1), c.u);
                let u0 = cv(self.u_k_true(w, 0), c.u);
                let v_v = cv(self.v_k_true(w), c.v);
                let bv = b_inj(1, w, z, m, l);
                let mut d = v_v;
                if a == 1 {
                    d += q_obs / (g1 * r_obs) * (y - bv);
                    d += (s_v - v_v) / g1;
                } else {
                    d += (u1 - u0) * (m as f64 - q1s) / (1.0 - g1);
                }
                d
            }
            EstimandKind::ThetaAll => {
                let ratio = if c.ratio {
                    let pi = corrupt_prob(1.0 / (1.0 + self.ratio_true(w, z, m, l)));
                    (1.0 - pi) / pi
                } else {
                    self.ratio_true(w, z, m, l)
                };
                let u_as = cv(self.u_all_true(w), c.u_all);
                let bv = b_inj(1, w, z, m, l);
                let mut d = u_as;
                if a == 1 {
                    // The classifier ratio p(a*|m,w)/p(a'|m,w) equals
                    // [(1-g)/g] * p(m|a*,w)/p(m|a',w), so dividing by 1-g
                    // yields the efficient weight p(m|a*,w)/(p(m|a',w) g).
                    d += ratio / (1.0 - g1) * (y - bv);
                } else {
                    d += (bv - u_as) / (1.0 - g1);
                }
                d
            }
        }
    }

    /// Builds a nuisance set over the rows of a sampled table, using exact
    /// law values with the requested corruptions — the injection used by
    /// oracle agreement and robustness studies.
    pub fn inject(
        &self,
        table: &ObservationTable,
        kind: EstimandKind,
        c: Corruption,
    ) -> Result<NuisanceSet> {
        let n = table.n();
        let n_med = self.nz + 1 + self.nl;
        if table.mediators.len() != n_med || table.w.len() != 1 {
            return Err(Error::Invalid("table layout does not match the law".into()));
        }
        let cp = |p: f64, on: bool| if on { corrupt_prob(p) } else { p };
        let cv = |x: f64, on: bool| if on { corrupt_val(x) } else { x };
        let b_inj =
            |a: usize, w: usize, z: usize, m: usize, l: usize| cp(self.b_at(a, w, z, m, l), c.b);
        let mut set = NuisanceSet::zeroed(n, 0.0);
        match kind {
            EstimandKind::ThetaAll => {
                set.q1_astar = Vec::new();
                set.q1_aprime = Vec::new();
                set.r1_aprime = Vec::new();
                set.r1_astar = Vec::new();
                set.s_aprime = Vec::new();
                set.u1_aprime = Vec::new();
                set.u0_aprime = Vec::new();
                set.v_aprime = Vec::new();
                set.lmean_aprime = Vec::new();
            }
            _ => {
                set.ratio_astar_aprime = Vec::new();
                set.u_astar = Vec::new();
            }
        }
        for i in 0..n {
            let (a, w, z, m, l) = self.row_config(table, i)?;
            set.g_aprime[i] = cp(self.g1(w), c.g);
            set.b_obs[i] = b_inj(a, w, z, m, l);
            set.b_aprime[i] = b_inj(1, w, z, m, l);
            match kind {
                EstimandKind::ThetaKPrime => {
                    set.q1_astar[i] = cp(self.q1(0, w), c.q);
                    set.q1_aprime[i] = cp(self.q1(1, w), c.q);
                    set.r1_aprime[i] = cp(self.r1(1, w, z), c.r);
                    set.r1_astar[i] = cp(self.r1(0, w, z), c.r);
                    set.s_aprime[i] = self.s_inj(c, w, z);
                    set.u1_aprime[i] = cv(self.u_true(w, 1), c.u);
                    set.u0_aprime[i] = cv(self.u_true(w, 0), c.u);
                    set.v_aprime[i] = cv(self.v_true(w), c.v);
                    set.lmean_aprime[i] = self.lmean_inj(c, w, z, m);
                }
                EstimandKind::ThetaK => {
                    set.q1_astar[i] = cp(self.q1(0, w), c.q);
                    set.q1_aprime[i] = cp(self.q1(1, w), c.q);
                    set.r1_aprime[i] = cp(self.r_k_true(1, w, z, l), c.r);
                    set.r1_astar[i] = cp(self.r_k_true(0, w, z, l), c.r);
                    set.s_aprime[i] = self.s_k_inj(c, w, z, l);
                    set.u1_aprime[i] = cv(self.u_k_true(w, 1), c.u);
                    set.u0_aprime[i] = cv(self.u_k_true(w, 0), c.u);
                    set.v_aprime[i] = cv(self.v_k_true(w), c.v);
                    set.lmean_aprime[i] = set.b_aprime[i];
                }
                EstimandKind::ThetaAll => {
                    set.ratio_astar_aprime[i] = if c.ratio {
                        let pi = corrupt_prob(1.0 / (1.0 + self.ratio_true(w, z, m, l)));
                        (1.0 - pi) / pi
                    } else {
                        self.ratio_true(w, z, m, l)
                    };
                    set.u_astar[i] = cv(self.u_all_true(w), c.u_all);
                }
            }
        }
        Ok(set)
    }

    /// Decodes one table row into law coordinates.
    fn row_config(
        &self,
        table: &ObservationTable,
        i: usize,
    ) -> Result<(usize, usize, usize, usize, usize)> {
        let w = table.w[0][i] as usize;
        if w >= self.nw() || table.w[0][i].fract() != 0.0 {
            return Err(Error::Invalid(alloc::format!(
                "row {i}: confounder value {} outside the law's support",
                table.w[0][i]
            )));
        }
        let a = usize::from(table.a[i] == 1.0);
        let mut z = 0usize;
        for bit in 0..self.nz {
            if table.mediators[bit][i] == 1.0 {
                z |= 1 << bit;
            }
        }
        let m = usize::from(table.mediators[self.nz][i] == 1.0);
        let mut l = 0usize;
        for bit in 0..self.nl {
            if table.mediators[self.nz + 1 + bit][i] == 1.0 {
                l |= 1 << bit;
            }
        }
        Ok((a, w, z, m, l))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_law_is_valid() {
        DiscreteLaw::canonical().validate().unwrap();
    }

    #[test]
    fn both_enumeration_routes_agree() {
        let law = DiscreteLaw::canonical();
        for kind in [EstimandKind::ThetaKPrime, EstimandKind::ThetaK, EstimandKind::ThetaAll] {
            let direct = law.exact_theta(kind);
            let alt = law.exact_theta_alt(kind);
            assert!(
                (direct - alt).abs() < 1e-14,
                "{kind:?}: {direct} vs {alt}"
            );
            assert!(direct > 0.0 && direct < 1.0);
        }
    }

    #[test]
    fn flow_on_shifts_more_than_no_flow_on() {
        // With positive flow-on effects through L, shifting the mediator
        // with flow-on moves the outcome further from E(Y_{a'}).
        let law = DiscreteLaw::canonical();
        let ey = law.exact_ey_aprime();
        let tkp = law.exact_theta(EstimandKind::ThetaKPrime);
        let tk = law.exact_theta(EstimandKind::ThetaK);
        assert!(ey - tkp > ey - tk, "{tkp} vs {tk}");
    }

    #[test]
    fn canonical_law_frozen_values() {
        // Pinned double-enumeration values for the canonical fixture law.
        let law = DiscreteLaw::canonical();
        assert!((law.exact_theta(EstimandKind::ThetaKPrime) - 0.50191).abs() < 1e-14);
        assert!((law.exact_theta(EstimandKind::ThetaK) - 0.50941).abs() < 1e-14);
        assert!((law.exact_theta(EstimandKind::ThetaAll) - 0.45066).abs() < 1e-14);
        assert!((law.exact_ey_aprime() - 0.55941).abs() < 1e-14);
        assert!((law.exact_var_dp(EstimandKind::ThetaKPrime) - 0.798_887_742_326_470_4).abs() < 1e-12);
        assert!((law.exact_var_dp(EstimandKind::ThetaK) - 0.851_300_798_830_247_1).abs() < 1e-12);
        assert!((law.exact_var_dp(EstimandKind::ThetaAll) - 0.885_426_971_414_710_7).abs() < 1e-12);
    }

    #[test]
    fn corruption_moves_the_estimating_equation() {
        let law = DiscreteLaw::canonical();
        let theta = law.exact_theta(EstimandKind::ThetaKPrime);
        let biased =
            law.expected_one_step(EstimandKind::ThetaKPrime, Corruption::everything());
        assert!((biased - theta).abs() > 1e-3, "bias {}", biased - theta);
    }

    #[test]
    fn all_robustness_rows_leave_no_bias() {
        // Each row corrupts the complement of one multiply-robust
        // configuration; the estimating equation must stay exactly solved.
        let law = DiscreteLaw::canonical();
        let theta = law.exact_theta(EstimandKind::ThetaKPrime);
        let rows: [(&str, Corruption); 5] = [
            // consistent: b, q, s, v
            ("a", Corruption { g: true, r: true, u: true, ..Corruption::none() }),
            // consistent: b, g, q, s
            ("b", Corruption { r: true, u: true, v: true, ..Corruption::none() }),
            // consistent: q, r, v
            ("c", Corruption { b: true, g: true, s: true, u: true, ..Corruption::none() }),
            // consistent: g, q, r
            ("d", Corruption { b: true, s: true, u: true, v: true, ..Corruption::none() }),
            // consistent: b, g, r, u
            ("e", Corruption { q: true, s: true, v: true, ..Corruption::none() }),
        ];
        for (name, c) in rows {
            let val = law.expected_one_step(EstimandKind::ThetaKPrime, c);
            assert!(
                (val - theta).abs() < 1e-13,
                "row {name} biased: {}",
                val - theta
            );
        }
    }

    #[test]
    fn sampling_matches_marginals() {
        let law = DiscreteLaw::canonical();
        let table = law.sample(20000, 7).unwrap();
        let n = table.n() as f64;
        let pw1: f64 = table.w[0].iter().sum::<f64>() / n;
        assert!((pw1 - 0.4).abs() < 0.02);
        let pa: f64 = table.a.iter().sum::<f64>() / n;
        let expect_pa = 0.6 * 0.35 + 0.4 * 0.55;
        assert!((pa - expect_pa).abs() < 0.02);
        // Determinism.
        let again = law.sample(100, 7).unwrap();
        for i in 0..100 {
            assert_eq!(again.y[i], table.y[i]);
        }
    }

    #[test]
    fn injected_nuisances_solve_the_estimating_equation_in_expectation() {
        use crate::eif::eif_components;
        let law = DiscreteLaw::canonical();
        let table = law.sample(4000, 11).unwrap();
        for kind in [EstimandKind::ThetaKPrime, EstimandKind::ThetaK, EstimandKind::ThetaAll] {
            let spec = law.estimand_spec(kind);
            let set = law.inject(&table, kind, Corruption::none()).unwrap();
            let eif = eif_components(&table, &spec, &set, false).unwrap();
            let theta = eif.one_step_theta();
            let se = eif.standard_error(theta);
            let truth = law.exact_theta(kind);
            assert!(
                (theta - truth).abs() < 4.0 * se,
                "{kind:?}: {theta} vs {truth} (se {se})"
            );
        }
    }
}
