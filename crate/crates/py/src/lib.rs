//! Python bindings: identities, orders, the limit order book, scenarios,
//! simulation runs and ledger verification.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use xchange_core::ledger::{dump, verify_ledger, BlockPartition};
use xchange_core::orderbook::{AssetPair, LimitOrderBook, OrderId, OrderSpec};
use xchange_core::{Hash, Identity as CoreIdentity, PeerId, SimDuration, SimTime};
use xchange_sim::{PolicySpec, Scenario as CoreScenario};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn peer_hex(p: &PeerId) -> String {
    hex::encode(p.0)
}

fn parse_peer(s: &str) -> PyResult<PeerId> {
    let bytes = hex::decode(s).map_err(value_err)?;
    let arr: [u8; 32] = bytes.try_into().map_err(|_| PyValueError::new_err("peer id must be 32 bytes"))?;
    Ok(PeerId(arr))
}

/// `(creator hex, sequence number)`.
type PyOrderId = (String, u64);

fn order_id(id: &OrderId) -> PyOrderId {
    (peer_hex(&id.creator), id.seq)
}

fn parse_order_id(id: &PyOrderId) -> PyResult<OrderId> {
    Ok(OrderId { creator: parse_peer(&id.0)?, seq: id.1 })
}

/// Deterministic signing identity.
#[pyclass(frozen)]
struct Identity(CoreIdentity);

#[pymethods]
impl Identity {
    #[new]
    fn new(seed: u64, index: u64) -> Self {
        Identity(CoreIdentity::derive(seed, index))
    }

    #[getter]
    fn peer_id(&self) -> String {
        peer_hex(&self.0.peer_id())
    }

    /// Signs the SHA-256 digest of `data`; returns the 64-byte signature.
    fn sign(&self, data: &[u8]) -> Vec<u8> {
        self.0.sign(&Hash::digest(data)).bytes.to_vec()
    }

    /// Checks a signature made by `sign`.
    #[staticmethod]
    fn verify(peer_id: &str, data: &[u8], signature: &[u8]) -> PyResult<bool> {
        let bytes: [u8; 64] = signature.try_into().map_err(|_| PyValueError::new_err("signature must be 64 bytes"))?;
        let sig = xchange_core::Signature { signer: parse_peer(peer_id)?, bytes };
        Ok(sig.verify(&Hash::digest(data)))
    }
}

/// A signed offer (sell base) or request (buy base).
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Order(OrderSpec);

#[pymethods]
impl Order {
    #[new]
    #[pyo3(signature = (identity, seq, is_offer, base, base_qty, quote, quote_qty, created_ms=0, timeout_secs=3600))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        identity: &Identity,
        seq: u64,
        is_offer: bool,
        base: &str,
        base_qty: u64,
        quote: &str,
        quote_qty: u64,
        created_ms: u64,
        timeout_secs: u64,
    ) -> PyResult<Self> {
        if base_qty == 0 || quote_qty == 0 {
            return Err(PyValueError::new_err("quantities must be positive"));
        }
        Ok(Order(OrderSpec::new_signed(
            &identity.0,
            seq,
            SimTime::from_millis(created_ms),
            SimDuration::from_secs(timeout_secs),
            is_offer,
            AssetPair::new(base, base_qty, quote, quote_qty),
        )))
    }

    #[getter]
    fn id(&self) -> PyOrderId {
        order_id(&self.0.id())
    }

    #[getter]
    fn is_offer(&self) -> bool {
        self.0.is_offer
    }

    #[getter]
    fn base(&self) -> String {
        self.0.pair.base.as_str().to_string()
    }

    #[getter]
    fn quote(&self) -> String {
        self.0.pair.quote.as_str().to_string()
    }

    #[getter]
    fn base_qty(&self) -> u64 {
        self.0.pair.base_qty
    }

    #[getter]
    fn quote_qty(&self) -> u64 {
        self.0.pair.quote_qty
    }

    #[getter]
    fn remaining(&self) -> u64 {
        self.0.remaining()
    }

    /// Quote units per base unit.
    #[getter]
    fn price(&self) -> f64 {
        self.0.pair.quote_qty as f64 / self.0.pair.base_qty as f64
    }

    fn __repr__(&self) -> String {
        let side = if self.0.is_offer { "offer" } else { "request" };
        format!(
            "Order({side} {} {} for {} {}, seq {})",
            self.0.pair.base_qty,
            self.0.pair.base.as_str(),
            self.0.pair.quote_qty,
            self.0.pair.quote.as_str(),
            self.0.order_seq
        )
    }
}

/// Price-time priority book for one asset pair.
#[pyclass]
struct OrderBook(LimitOrderBook);

#[pymethods]
impl OrderBook {
    #[new]
    fn new(base: &str, quote: &str) -> Self {
        OrderBook(LimitOrderBook::new(AssetPair::new(base, 1, quote, 1).normalized().0.key()))
    }

    #[pyo3(signature = (order, now_ms=0))]
    fn insert(&mut self, order: &Order, now_ms: u64) -> PyResult<()> {
        self.0.insert(order.0.clone(), SimTime::from_millis(now_ms)).map_err(value_err)
    }

    fn remove(&mut self, id: PyOrderId) -> PyResult<Order> {
        self.0.remove(&parse_order_id(&id)?).map(Order).map_err(|e| PyKeyError::new_err(e.to_string()))
    }

    /// Records `qty` traded base units; returns whether the order left the book.
    fn record_trade(&mut self, id: PyOrderId, qty: u64) -> PyResult<bool> {
        self.0.record_trade(&parse_order_id(&id)?, qty).map_err(value_err)
    }

    /// Resting orders that cross `incoming`, best first, with the quantity
    /// each could fill.
    fn match_order(&self, incoming: &Order) -> Vec<(Order, u64)> {
        self.0.match_order(&incoming.0).into_iter().map(|c| (Order(c.order), c.qty)).collect()
    }

    fn contains(&self, id: PyOrderId) -> PyResult<bool> {
        Ok(self.0.contains(&parse_order_id(&id)?))
    }

    fn snapshot(&self) -> String {
        self.0.snapshot()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Simulation scenario.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Scenario(CoreScenario);

#[pymethods]
impl Scenario {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        CoreScenario::from_toml(text).map(Scenario).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        CoreScenario::load(std::path::Path::new(path)).map(Scenario).map_err(value_err)
    }

    /// `load / 2` traders placing two orders per second each.
    #[staticmethod]
    #[pyo3(signature = (load, duration_secs, seed=1, restrict=None, incset=1))]
    fn synthetic(load: u32, duration_secs: f64, seed: u64, restrict: Option<u32>, incset: u32) -> PyResult<Self> {
        let policy = PolicySpec { restrict, payments_per_side: incset, ..PolicySpec::default() };
        let s = CoreScenario::synthetic(load, duration_secs, policy, seed);
        s.validate().map_err(value_err)?;
        Ok(Scenario(s))
    }

    fn to_toml(&self) -> String {
        self.0.to_toml()
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.0.seed = seed;
    }

    #[getter]
    fn policy(&self) -> String {
        self.0.policy.label()
    }
}

/// Outcome of one simulation run.
#[pyclass(frozen)]
struct RunResult {
    #[pyo3(get)]
    trace_hash: String,
    #[pyo3(get)]
    passed: bool,
    /// `(name, passed, detail)` per invariant check.
    #[pyo3(get)]
    checks: Vec<(String, bool, String)>,
    #[pyo3(get)]
    summary: BTreeMap<String, f64>,
    #[pyo3(get)]
    wall_secs: f64,
    ledger: String,
    witnesses: String,
}

#[pymethods]
impl RunResult {
    /// Every published partition, one hex line each.
    fn ledger_dump(&self) -> String {
        self.ledger.clone()
    }

    /// Copies of others' chains held by the peers.
    fn witness_dump(&self) -> String {
        self.witnesses.clone()
    }
}

#[pyfunction]
fn run(py: Python<'_>, scenario: &Scenario) -> PyResult<RunResult> {
    let s = scenario.0.clone();
    let out = py.detach(|| xchange_sim::run(&s)).map_err(value_err)?;
    let partitions: Vec<&BlockPartition> = out.ledger.peers().flat_map(|p| out.ledger.chain(p)).collect();
    let held: Vec<&BlockPartition> = out.held_copies().into_iter().map(|(_, b)| b).collect();
    Ok(RunResult {
        trace_hash: out.trace_hash.clone(),
        passed: out.passed(),
        checks: out.checks.iter().map(|c| (c.name.to_string(), c.passed, c.detail.clone())).collect(),
        summary: out.metrics.summary.fields().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        wall_secs: out.wall.as_secs_f64(),
        ledger: dump::dump(partitions),
        witnesses: dump::dump(held),
    })
}

/// Verifies a ledger dump against witness dumps; returns the violations.
#[pyfunction]
#[pyo3(signature = (ledger, witnesses=Vec::new()))]
fn verify(ledger: &str, witnesses: Vec<String>) -> Vec<String> {
    let mut problems = Vec::new();
    let mut decode = |text: &str| -> Vec<BlockPartition> {
        dump::parse(text)
            .into_iter()
            .filter_map(|r| r.map_err(|(line, e)| problems.push(format!("line {line}: {e}"))).ok())
            .collect()
    };
    let parts = decode(ledger);
    let held: Vec<BlockPartition> = witnesses.iter().flat_map(|w| decode(w)).collect();
    problems.extend(verify_ledger(&parts, &held).violations.iter().map(|v| v.to_string()));
    problems
}

#[pymodule]
fn xchange(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Identity>()?;
    m.add_class::<Order>()?;
    m.add_class::<OrderBook>()?;
    m.add_class::<Scenario>()?;
    m.add_class::<RunResult>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
