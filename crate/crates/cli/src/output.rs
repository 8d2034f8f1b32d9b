//! Result tables and ledger dumps written by `run`.

use std::collections::HashSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use statrs::statistics::Statistics;
use xchange_core::ledger::{dump, BlockPartition};
use xchange_sim::{RunOutput, Summary};

/// Mean and sample standard deviation; the deviation is `None` for fewer
/// than two values.
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    if values.is_empty() {
        return (f64::NAN, None);
    }
    let mean = values.iter().mean();
    let std = (values.len() > 1).then(|| values.iter().std_dev());
    (mean, std)
}

pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

/// One row of `summary.csv`.
#[derive(Clone, Debug)]
pub struct SummaryRow {
    pub rep: u32,
    pub seed: u64,
    pub trace_hash: String,
    pub passed: bool,
    pub summary: Summary,
}

/// `summary.csv`: one row per repetition, then `mean` and `stddev` rows.
pub fn summary_table(rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let names: Vec<&str> = Summary::default().fields().iter().map(|f| f.0).collect();
    let mut header = vec!["rep", "seed", "trace_hash", "passed"];
    header.extend(&names);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.rep.to_string(), r.seed.to_string(), r.trace_hash.clone(), r.passed.to_string()];
        rec.extend(r.summary.fields().into_iter().map(|(_, v)| fmt_num(v)));
        w.write_record(&rec)?;
    }
    if rows.len() > 1 {
        let columns: Vec<Vec<f64>> =
            (0..names.len()).map(|i| rows.iter().map(|r| r.summary.fields()[i].1).collect()).collect();
        for (label, pick) in [("mean", 0), ("stddev", 1)] {
            let mut rec = vec![label.to_string(), String::new(), String::new(), String::new()];
            for col in &columns {
                let (m, s) = mean_std(col);
                rec.push(if pick == 0 { fmt_num(m) } else { s.map(fmt_num).unwrap_or_default() });
            }
            w.write_record(&rec)?;
        }
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Every partition in the run's global ledger view, chain by chain.
pub fn ledger_dump(out: &RunOutput) -> String {
    let parts: Vec<&BlockPartition> = out.ledger.peers().flat_map(|p| out.ledger.chain(p)).collect();
    dump::dump(parts)
}

/// Copies peers hold of chains other than their own, deduplicated.
pub fn witness_dump(out: &RunOutput) -> String {
    let mut seen = HashSet::new();
    let parts = out.held_copies().into_iter().map(|(_, b)| b).filter(|b| seen.insert(b.hash()));
    dump::dump(parts.collect::<Vec<_>>())
}

#[derive(Serialize)]
struct OrderLine<'a> {
    rep: u32,
    creator: String,
    seq: u64,
    is_offer: bool,
    base_qty: u64,
    created_us: u64,
    fulfilled_us: Option<u64>,
    closed: Option<&'a str>,
}

#[derive(Serialize)]
struct TradeLine<'a> {
    rep: u32,
    trade: String,
    initiator: String,
    counterparty: String,
    established_us: u64,
    first_payment_us: Option<u64>,
    completed_us: Option<u64>,
    aborted_us: Option<u64>,
    abort_reason: Option<&'a str>,
    payments: u32,
    qty: Option<u64>,
}

#[derive(Serialize)]
struct PeerLine {
    rep: u32,
    peer: String,
    role: xchange_sim::trace::Role,
    behavior: xchange_core::protocol::Behavior,
    messages_sent: u64,
    blocks_created: u64,
    stolen_trades: u64,
    stolen_amount: u64,
}

/// Writes the per-run files of a `run` output directory as repetitions
/// finish.
pub struct RunWriter {
    dir: PathBuf,
    orders: csv::Writer<File>,
    trades: csv::Writer<File>,
    peers: csv::Writer<File>,
    checks: csv::Writer<File>,
    timing: csv::Writer<File>,
    rows: Vec<SummaryRow>,
}

impl RunWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let open = |name: &str| -> Result<csv::Writer<File>> {
            let path = dir.join(name);
            csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))
        };
        let mut checks = open("checks.csv")?;
        checks.write_record(["rep", "check", "passed", "detail"])?;
        let mut timing = open("timing.csv")?;
        timing.write_record(["rep", "seed", "wall_secs", "events", "sim_end_secs"])?;
        Ok(RunWriter {
            dir: dir.to_path_buf(),
            orders: open("orders.csv")?,
            trades: open("trades.csv")?,
            peers: open("peers.csv")?,
            checks,
            timing,
            rows: Vec::new(),
        })
    }

    pub fn add(&mut self, rep: u32, out: &RunOutput) -> Result<()> {
        for o in &out.metrics.orders {
            self.orders.serialize(OrderLine {
                rep,
                creator: o.order.creator.to_hex(),
                seq: o.order.seq,
                is_offer: o.is_offer,
                base_qty: o.base_qty,
                created_us: o.created_us,
                fulfilled_us: o.fulfilled_us,
                closed: o.closed.as_deref(),
            })?;
        }
        for t in &out.metrics.trades {
            self.trades.serialize(TradeLine {
                rep,
                trade: t.trade.to_hex(),
                initiator: t.initiator.to_hex(),
                counterparty: t.counterparty.to_hex(),
                established_us: t.established_us,
                first_payment_us: t.first_payment_us,
                completed_us: t.completed_us,
                aborted_us: t.aborted_us,
                abort_reason: t.abort_reason.as_deref(),
                payments: t.payments,
                qty: t.qty,
            })?;
        }
        for p in &out.metrics.peers {
            self.peers.serialize(PeerLine {
                rep,
                peer: p.peer.to_hex(),
                role: p.role,
                behavior: p.behavior,
                messages_sent: p.messages_sent,
                blocks_created: p.blocks_created,
                stolen_trades: p.stolen_trades,
                stolen_amount: p.stolen_amount,
            })?;
        }
        for c in &out.checks {
            self.checks.write_record([rep.to_string(), c.name.to_string(), c.passed.to_string(), c.detail.clone()])?;
        }
        self.timing.write_record([
            rep.to_string(),
            out.scenario.seed.to_string(),
            format!("{:.3}", out.wall.as_secs_f64()),
            out.events.len().to_string(),
            format!("{}", out.end.as_micros() as f64 / 1e6),
        ])?;
        std::fs::write(self.dir.join(format!("ledger-{rep}.dump")), ledger_dump(out))?;
        std::fs::write(self.dir.join(format!("witnesses-{rep}.dump")), witness_dump(out))?;
        self.rows.push(SummaryRow {
            rep,
            seed: out.scenario.seed,
            trace_hash: out.trace_hash.clone(),
            passed: out.passed(),
            summary: out.metrics.summary.clone(),
        });
        Ok(())
    }

    pub fn finish(mut self) -> Result<Vec<SummaryRow>> {
        for w in [&mut self.orders, &mut self.trades, &mut self.peers, &mut self.checks, &mut self.timing] {
            w.flush()?;
        }
        std::fs::write(self.dir.join("summary.csv"), summary_table(&self.rows)?)?;
        Ok(self.rows)
    }
}
