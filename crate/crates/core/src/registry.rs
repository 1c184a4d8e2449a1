//! Named strategy registries: membership checkers, bound strategies and
//! self-check suites are trait objects looked up by name at runtime.

use serde::{Deserialize, Serialize};

use crate::bounds::{auxiliary_capacity_bound, full_bound, prior_bound, BoundReport};
use crate::error::{Error, Result};
use crate::lemmas::{
    conditioning_suite, counting_suite, decomposition_suite, minimax_suite, SuiteReport,
};
use crate::maximality::{
    adversary_value_with_tol, in_gamma_rho, in_gamma_star, in_theta_star, in_v_max,
    is_maximal_prior, is_maximal_td, is_maximal_universal, GammaStarReading, MaximalityCertificate,
    SetCheck, SupportCheck, TdCertificate, TdOptions, TypeDependentMetric, UniversalReport,
    VmaxReport,
};
use crate::prob::{marginal_y, marginal_yhat, Channel, Coupling, Distribution, Metric};
use crate::search::SearchOptions;

struct Entry<T: ?Sized> {
    name: &'static str,
    aliases: &'static [&'static str],
    item: Box<T>,
}

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: Vec<Entry<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: Vec::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, aliases: &'static [&'static str], item: Box<T>) {
        self.entries.retain(|e| e.name != name);
        self.entries.push(Entry {
            name,
            aliases,
            item,
        });
    }

    pub fn get(&self, name: &str) -> Result<&T> {
        self.entries
            .iter()
            .find(|e| e.name == name || e.aliases.contains(&name))
            .map(|e| e.item.as_ref())
            .ok_or_else(|| Error::UnknownName {
                kind: self.kind,
                name: name.into(),
                known: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name).collect()
    }
}

/// Everything a membership checker may need; checkers reject queries that
/// lack a field they require.
pub struct MembershipQuery<'a> {
    pub coupling: &'a Coupling,
    /// `None` asks for a check over an input grid where supported.
    pub px: Option<&'a Distribution>,
    pub q: &'a Metric,
    /// Channel for the auxiliary-channel game; defaults to the coupling's Y-marginal.
    pub channel: Option<&'a Channel>,
    pub rho: Option<&'a Metric>,
    pub td_metric: Option<&'a dyn TypeDependentMetric>,
    pub tol: f64,
    pub grid_step: f64,
    pub gamma_star_reading: GammaStarReading,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Evidence {
    Adversary(MaximalityCertificate),
    Universal(UniversalReport),
    Support(SupportCheck),
    Set(SetCheck),
    Game(VmaxReport),
    TypeDependent(TdCertificate),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipOutcome {
    pub set: String,
    pub member: bool,
    /// Certificate slack where the set has one (metric units).
    pub slack: Option<f64>,
    pub evidence: Evidence,
}

pub trait MembershipChecker: Send + Sync {
    fn check(&self, query: &MembershipQuery) -> Result<MembershipOutcome>;
}

fn need_px<'a>(query: &MembershipQuery<'a>, set: &str) -> Result<&'a Distribution> {
    query.px.ok_or_else(|| {
        Error::Precondition(format!("the {} check needs an input distribution", set))
    })
}

struct AdversaryChecker;
impl MembershipChecker for AdversaryChecker {
    fn check(&self, query: &MembershipQuery) -> Result<MembershipOutcome> {
        match query.px {
            Some(px) => {
                let cert = adversary_value_with_tol(query.coupling, px, query.q, query.tol)?;
                Ok(MembershipOutcome {
                    set: "mmax".into(),
                    member: cert.is_member(),
                    slack: Some(cert.slack),
                    evidence: Evidence::Adversary(cert),
                })
            }
            None => {
                let rep =
                    is_maximal_universal(query.coupling, query.q, query.grid_step, query.tol)?;
                Ok(MembershipOutcome {
                    set: "mmax".into(),
                    member: rep.member,
                    slack: Some(rep.min_slack),
                    evidence: Evidence::Universal(rep),
                })
            }
        }
    }
}

struct PriorChecker;
impl MembershipChecker for PriorChecker {
    fn check(&self, query: &MembershipQuery) -> Result<MembershipOutcome> {
        let rep = is_maximal_prior(query.coupling, query.q)?;
        Ok(MembershipOutcome {
            set: "mmax-prior".into(),
            member: rep.member,
            slack: None,
            evidence: Evidence::Support(rep),
        })
    }
}

struct ThetaStarChecker;
impl MembershipChecker for ThetaStarChecker {
    fn check(&self, query: &MembershipQuery) -> Result<MembershipOutcome> {
        let px = need_px(query, "theta-star")?;
        let (member, rep) = in_theta_star(query.coupling, px, query.q, query.tol)?;
        Ok(MembershipOutcome {
            set: "theta-star".into(),
            member,
            slack: Some(rep.slack),
            evidence: Evidence::Set(rep),
        })
    }
}

struct GammaStarChecker;
impl MembershipChecker for GammaStarChecker {
    fn check(&self, query: &MembershipQuery) -> Result<MembershipOutcome> {
        let px = need_px(query, "gamma-star")?;
        let (member, rep) = in_gamma_star(
            query.coupling,
            px,
            query.q,
            query.tol,
            query.gamma_star_reading,
        )?;
        Ok(MembershipOutcome {
            set: "gamma-star".into(),
            member,
            slack: Some(rep.slack),
            evidence: Evidence::Set(rep),
        })
    }
}

struct GammaRhoChecker;
impl MembershipChecker for GammaRhoChecker {
    fn check(&self, query: &MembershipQuery) -> Result<MembershipOutcome> {
        let rho = query.rho.unwrap_or(query.q);
        let rep = in_gamma_rho(query.coupling, rho, query.q)?;
        Ok(MembershipOutcome {
            set: "gamma-rho".into(),
            member: rep.member,
            slack: None,
            evidence: Evidence::Support(rep),
        })
    }
}

struct VmaxChecker;
impl MembershipChecker for VmaxChecker {
    fn check(&self, query: &MembershipQuery) -> Result<MembershipOutcome> {
        let px = need_px(query, "vmax")?;
        let own;
        let w = match query.channel {
            Some(w) => w,
            None => {
                own = marginal_y(query.coupling);
                &own
            }
        };
        let rep = in_v_max(&marginal_yhat(query.coupling), px, w, query.q, query.tol)?;
        Ok(MembershipOutcome {
            set: "vmax".into(),
            member: rep.member,
            slack: Some(rep.slack),
            evidence: Evidence::Game(rep),
        })
    }
}

struct TypeDependentChecker;
impl MembershipChecker for TypeDependentChecker {
    fn check(&self, query: &MembershipQuery) -> Result<MembershipOutcome> {
        let px = need_px(query, "mmax-td")?;
        let additive;
        let metric: &dyn TypeDependentMetric = match query.td_metric {
            Some(m) => m,
            None => {
                additive = crate::maximality::AdditiveTd(query.q.clone());
                &additive
            }
        };
        let cert = is_maximal_td(query.coupling, px, metric, query.tol, &TdOptions::default())?;
        Ok(MembershipOutcome {
            set: "mmax-td".into(),
            member: cert.verdict.is_member(),
            slack: Some(cert.slack),
            evidence: Evidence::TypeDependent(cert),
        })
    }
}

pub fn membership_checkers() -> Registry<dyn MembershipChecker> {
    let mut r: Registry<dyn MembershipChecker> = Registry::new("membership set");
    r.register("mmax", &[], Box::new(AdversaryChecker));
    r.register("mmax-prior", &[], Box::new(PriorChecker));
    r.register("theta-star", &[], Box::new(ThetaStarChecker));
    r.register("gamma-star", &[], Box::new(GammaStarChecker));
    r.register("gamma-rho", &[], Box::new(GammaRhoChecker));
    r.register("vmax", &[], Box::new(VmaxChecker));
    r.register("mmax-td", &[], Box::new(TypeDependentChecker));
    r
}

pub struct BoundQuery<'a> {
    pub w: &'a Channel,
    pub q: &'a Metric,
    pub coupling: Option<&'a Coupling>,
    pub grid_step: f64,
    pub tol_marginal: f64,
    pub tol: f64,
    pub search: SearchOptions,
}

pub trait BoundStrategy: Send + Sync {
    fn compute(&self, query: &BoundQuery) -> Result<BoundReport>;
}

struct AuxiliaryCapacity;
impl BoundStrategy for AuxiliaryCapacity {
    fn compute(&self, query: &BoundQuery) -> Result<BoundReport> {
        let c = query.coupling.ok_or_else(|| {
            Error::Precondition("the auxiliary-capacity bound needs a coupling".into())
        })?;
        auxiliary_capacity_bound(
            c,
            query.w,
            query.q,
            query.grid_step,
            query.tol_marginal,
            query.tol,
        )
    }
}

struct FullGrid;
impl BoundStrategy for FullGrid {
    fn compute(&self, query: &BoundQuery) -> Result<BoundReport> {
        full_bound(query.w, query.q, query.grid_step, &query.search)
    }
}

struct PriorSet;
impl BoundStrategy for PriorSet {
    fn compute(&self, query: &BoundQuery) -> Result<BoundReport> {
        prior_bound(query.w, query.q, query.grid_step)
    }
}

pub fn bound_strategies() -> Registry<dyn BoundStrategy> {
    let mut r: Registry<dyn BoundStrategy> = Registry::new("bound mode");
    r.register(
        "auxiliary-capacity",
        &["corollary1"],
        Box::new(AuxiliaryCapacity),
    );
    r.register("full", &["full-grid"], Box::new(FullGrid));
    r.register("prior", &[], Box::new(PriorSet));
    r
}

pub trait LemmaSuite: Send + Sync {
    fn run(&self, seed: u64) -> Result<SuiteReport>;
}

impl<F> LemmaSuite for F
where
    F: Fn(u64) -> Result<SuiteReport> + Send + Sync,
{
    fn run(&self, seed: u64) -> Result<SuiteReport> {
        self(seed)
    }
}

pub fn lemma_suites() -> Registry<dyn LemmaSuite> {
    let mut r: Registry<dyn LemmaSuite> = Registry::new("self-check suite");
    r.register("counting", &["appendixB"], Box::new(counting_suite));
    r.register("conditioning", &["appendixC"], Box::new(conditioning_suite));
    r.register("decomposition", &[], Box::new(decomposition_suite));
    r.register("minimax", &[], Box::new(minimax_suite));
    r
}
