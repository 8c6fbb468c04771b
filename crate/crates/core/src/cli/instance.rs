//! Versioned JSON instance files.
//!
//! Nodes are referred to by name; edge indices follow the order of the
//! `edges` array, which also fixes every tie-break.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::assignment::DemandMatrix;
use crate::distribution::{DistributionInstance, Mode, SigmaSite, Transport};
use crate::market::{Consumer, MarketInstance, Producer};
use crate::network::{CostFunction, Edge, Network};

pub const FORMAT_VERSION: u32 = 1;

/// An input problem: the message names the offending field.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct InputError {
    pub path: String,
    pub message: String,
}

impl InputError {
    pub fn new(path: impl Into<String>, message: impl ToString) -> Self {
        InputError {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

type Input<T> = std::result::Result<T, InputError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub version: u32,
    #[serde(default)]
    pub network: Option<NetworkSpec>,
    #[serde(default)]
    pub distribution: Option<DistributionSpec>,
    #[serde(default)]
    pub market: Option<MarketSpec>,
    /// Smoothing scale for hard-capacity edges.
    #[serde(default)]
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub nodes: Vec<String>,
    pub edges: Vec<EdgeSpec>,
    #[serde(default)]
    pub od_pairs: Vec<OdSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub from: String,
    pub to: String,
    pub cost: CostFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Volume {
    Total(f64),
    /// One volume per commodity.
    Split(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdSpec {
    pub origin: String,
    pub destination: String,
    pub demand: Volume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteSpec {
    pub node: String,
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSpec {
    pub sources: Vec<SiteSpec>,
    pub sinks: Vec<SiteSpec>,
    /// Fixed costs, sources by sinks; the network is used when absent.
    #[serde(default)]
    pub costs: Option<Vec<Vec<f64>>>,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProducerSpec {
    pub node: String,
    pub u_max: Vec<f64>,
    #[serde(default)]
    pub chi: f64,
    pub c: Vec<f64>,
    #[serde(default)]
    pub a: Vec<Vec<f64>>,
    #[serde(default)]
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsumerSpec {
    pub node: String,
    pub q: Vec<Vec<f64>>,
    pub sigma_min: Vec<f64>,
    pub income: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    pub producers: Vec<ProducerSpec>,
    pub consumers: Vec<ConsumerSpec>,
    #[serde(default)]
    pub b: Vec<f64>,
    pub gamma: f64,
    /// Fixed costs, producers by consumers; the network is used when absent.
    #[serde(default)]
    pub costs: Option<Vec<Vec<f64>>>,
}

/// Parses an instance, reporting syntax errors by line and column and
/// schema errors by field path.
pub fn parse_instance(text: &str) -> Input<InstanceFile> {
    let inst: InstanceFile = parse_json(text)?;
    if inst.version != FORMAT_VERSION {
        return Err(InputError::new(
            "version",
            format!("unsupported format version {}, expected {FORMAT_VERSION}", inst.version),
        ));
    }
    Ok(inst)
}

pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Input<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let path = if path == "." { String::from("<root>") } else { path };
        InputError::new(path, format!("{inner}"))
    })
}

/// Node names resolved to indices.
struct Names(HashMap<String, usize>);

impl Names {
    fn get(&self, name: &str, path: String) -> Input<usize> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| InputError::new(path, format!("unknown node {name:?}")))
    }
}

fn finite_nonneg(v: f64, path: String) -> Input<f64> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(InputError::new(path, format!("must be finite and >= 0, got {v}")))
    }
}

impl InstanceFile {
    fn names(&self) -> Input<Names> {
        let mut out = HashMap::new();
        match &self.network {
            Some(n) => {
                for (k, name) in n.nodes.iter().enumerate() {
                    if out.insert(name.clone(), k).is_some() {
                        return Err(InputError::new(format!("network.nodes[{k}]"), format!("duplicate node {name:?}")));
                    }
                }
            }
            None => {
                // without a network, nodes are numbered by first appearance
                let mut add = |n: &str| {
                    let k = out.len();
                    out.entry(n.to_string()).or_insert(k);
                };
                if let Some(d) = &self.distribution {
                    d.sources.iter().chain(&d.sinks).for_each(|s| add(&s.node));
                }
                if let Some(m) = &self.market {
                    m.producers.iter().for_each(|p| add(&p.node));
                    m.consumers.iter().for_each(|c| add(&c.node));
                }
            }
        }
        Ok(Names(out))
    }

    pub fn network(&self) -> Input<Network> {
        let spec = self
            .network
            .as_ref()
            .ok_or_else(|| InputError::new("network", "this command needs a network section"))?;
        let names = self.names()?;
        let mut edges = Vec::with_capacity(spec.edges.len());
        for (k, e) in spec.edges.iter().enumerate() {
            let tail = names.get(&e.from, format!("network.edges[{k}].from"))?;
            let head = names.get(&e.to, format!("network.edges[{k}].to"))?;
            if tail == head {
                return Err(InputError::new(format!("network.edges[{k}].to"), "self-loop"));
            }
            e.cost
                .validate()
                .map_err(|err| InputError::new(format!("network.edges[{k}].cost"), err))?;
            edges.push(Edge::new(tail, head, e.cost));
        }
        let mut od = Vec::with_capacity(spec.od_pairs.len());
        for (w, p) in spec.od_pairs.iter().enumerate() {
            od.push((
                names.get(&p.origin, format!("network.od_pairs[{w}].origin"))?,
                names.get(&p.destination, format!("network.od_pairs[{w}].destination"))?,
            ));
        }
        Network::new(spec.nodes.clone(), edges, od).map_err(|e| InputError::new("network", e))
    }

    pub fn demands(&self) -> Input<DemandMatrix> {
        let spec = self
            .network
            .as_ref()
            .ok_or_else(|| InputError::new("network", "this command needs a network section"))?;
        let mut vols = Vec::with_capacity(spec.od_pairs.len());
        for (w, p) in spec.od_pairs.iter().enumerate() {
            let path = format!("network.od_pairs[{w}].demand");
            let v = match &p.demand {
                Volume::Total(x) => vec![finite_nonneg(*x, path)?],
                Volume::Split(xs) => xs.iter().map(|x| finite_nonneg(*x, path.clone())).collect::<Input<_>>()?,
            };
            vols.push(v);
        }
        DemandMatrix::new(vols).map_err(|e| InputError::new("network.od_pairs", e))
    }

    fn transport(&self, costs: &Option<Vec<Vec<f64>>>, path: &str) -> Input<Transport> {
        match costs {
            Some(t) => Ok(Transport::Fixed(t.clone())),
            None if self.network.is_some() => Ok(Transport::Network(self.network()?)),
            None => Err(InputError::new(format!("{path}.costs"), "give fixed costs or a network section")),
        }
    }

    pub fn distribution(&self, solve: crate::assignment::SolveConfig) -> Input<DistributionInstance> {
        let spec = self
            .distribution
            .as_ref()
            .ok_or_else(|| InputError::new("distribution", "this command needs a distribution section"))?;
        let names = self.names()?;
        let site = |s: &SiteSpec, path: String| -> Input<SigmaSite> {
            if !(s.alpha.is_finite() && s.beta.is_finite() && s.beta >= 0.0) {
                return Err(InputError::new(path, "needs finite alpha and beta >= 0"));
            }
            Ok(SigmaSite::new(names.get(&s.node, format!("{path}.node"))?, s.alpha, s.beta))
        };
        let sources = (spec.sources.iter().enumerate())
            .map(|(k, s)| site(s, format!("distribution.sources[{k}]")))
            .collect::<Input<Vec<_>>>()?;
        let sinks = (spec.sinks.iter().enumerate())
            .map(|(k, s)| site(s, format!("distribution.sinks[{k}]")))
            .collect::<Input<Vec<_>>>()?;
        if let Some(t) = &spec.costs {
            if t.len() != sources.len() || t.iter().any(|r| r.len() != sinks.len()) {
                return Err(InputError::new(
                    "distribution.costs",
                    format!("must be {} x {}", sources.len(), sinks.len()),
                ));
            }
        }
        let transport = self.transport(&spec.costs, "distribution")?;
        DistributionInstance::new(sources, sinks, transport, spec.mode.clone(), solve).map_err(|e| {
            let path = match e {
                crate::Error::UnbalancedMargins { .. } | crate::Error::Config(_) => "distribution.mode",
                _ => "distribution",
            };
            InputError::new(path, e)
        })
    }

    pub fn market(&self) -> Input<MarketInstance> {
        let spec = self
            .market
            .as_ref()
            .ok_or_else(|| InputError::new("market", "this command needs a market section"))?;
        let names = self.names()?;
        let producers = (spec.producers.iter().enumerate())
            .map(|(k, p)| {
                Ok(Producer {
                    node: names.get(&p.node, format!("market.producers[{k}].node"))?,
                    u_max: p.u_max.clone(),
                    chi: p.chi,
                    c: p.c.clone(),
                    a: p.a.clone(),
                    r: p.r.clone(),
                })
            })
            .collect::<Input<Vec<_>>>()?;
        let consumers = (spec.consumers.iter().enumerate())
            .map(|(k, c)| {
                Ok(Consumer {
                    node: names.get(&c.node, format!("market.consumers[{k}].node"))?,
                    q: c.q.clone(),
                    sigma_min: c.sigma_min.clone(),
                    income: c.income,
                })
            })
            .collect::<Input<Vec<_>>>()?;
        let transport = self.transport(&spec.costs, "market")?;
        MarketInstance::new(producers, consumers, spec.b.clone(), transport, spec.gamma).map_err(|e| {
            let msg = e.to_string();
            let path = if msg.contains("producer") {
                "market.producers"
            } else if msg.contains("consumer") {
                "market.consumers"
            } else if msg.contains("gamma") {
                "market.gamma"
            } else if msg.contains("resource") {
                "market.b"
            } else if msg.contains("fixed costs") {
                "market.costs"
            } else {
                "market"
            };
            InputError::new(path, msg)
        })
    }
}
