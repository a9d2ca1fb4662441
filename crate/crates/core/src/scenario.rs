//! Synthetic cannibalization scenarios with a conserved weekly category total.
//!
//! Each week the category sells `S_w` units, split across the products on sale
//! by a softmax over latent attractiveness. When a product launches, it is given
//! the attractiveness that makes its share exactly `share_decay_on_launch`, which
//! scales every incumbent's share by `1 - share_decay_on_launch`. Share noise is
//! multiplicative and renormalised, so weekly sales always sum to the week's
//! total.
//!
//! Feature columns, in order:
//!
//! | column | meaning |
//! |--------|---------|
//! | `f_0`  | product age in weeks (initial assortment starts at 52) |
//! | `f_1`  | weeks since the latest launch, capped at 52 |
//! | `f_2`  | number of products on sale |
//! | `f_3`  | noisy proxy of the product's latent attractiveness |
//! | `f_4`  | demand index tracking the category total; future weeks are scaled by `1 + stage1_bias_injection` |
//! | `f_5`  | own sales `num_weeks_future` weeks earlier (0 before launch) |

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::panel::{write_panel_rows, PanelDataset, PanelRecord};
use crate::scalar::Scalar;

pub const FEATURE_COUNT: usize = 6;
const AGE_CAP: u32 = 52;
const DEMAND_INDEX_NOISE: f64 = 0.02;
const PROXY_NOISE: f64 = 0.1;
const LATENT_SD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TotalCurve {
    Flat { base: f64 },
    LinearTrend { base: f64, slope: f64 },
    Seasonal { base: f64, amplitude: f64, period: f64 },
}

impl TotalCurve {
    pub fn at(&self, week: u32) -> f64 {
        let w = week as f64;
        match *self {
            TotalCurve::Flat { base } => base,
            TotalCurve::LinearTrend { base, slope } => base + slope * w,
            TotalCurve::Seasonal {
                base,
                amplitude,
                period,
            } => base * (1.0 + amplitude * (std::f64::consts::TAU * w / period).sin()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub num_products: usize,
    pub num_weeks_hist: u32,
    pub num_weeks_future: u32,
    /// Products launched after week 0; all others are on sale from week 0.
    pub launch_schedule: BTreeMap<String, u32>,
    pub category_total_curve: TotalCurve,
    /// Log-scale week-to-week noise on the category total.
    pub total_noise_sd: f64,
    pub share_decay_on_launch: f64,
    /// Log-scale noise on product shares.
    pub noise_sd: f64,
    /// Multiplicative shift of the demand-index feature in future weeks.
    pub stage1_bias_injection: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_products: 5,
            num_weeks_hist: 80,
            num_weeks_future: 20,
            launch_schedule: BTreeMap::from([(product_id(3), 40), (product_id(4), 88)]),
            category_total_curve: TotalCurve::Seasonal {
                base: 1000.0,
                amplitude: 0.2,
                period: 52.0,
            },
            total_noise_sd: 0.1,
            share_decay_on_launch: 0.25,
            noise_sd: 0.05,
            stage1_bias_injection: 0.3,
            seed: 7,
        }
    }
}

pub fn product_id(i: usize) -> String {
    format!("P{i:02}")
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_products == 0 || self.num_weeks_hist == 0 || self.num_weeks_future == 0 {
            return bad("num_products, num_weeks_hist and num_weeks_future must be positive".into());
        }
        let weeks = self.num_weeks_hist + self.num_weeks_future;
        let ids: Vec<String> = (0..self.num_products).map(product_id).collect();
        let mut used = std::collections::BTreeSet::new();
        for (p, &w) in &self.launch_schedule {
            if !ids.contains(p) {
                return bad(format!("launch for unknown product '{p}'"));
            }
            if w == 0 || w >= weeks {
                return bad(format!("launch week {w} of {p} outside 1..{weeks}"));
            }
            if !used.insert(w) {
                return bad(format!("two launches in week {w}"));
            }
        }
        if self.launch_schedule.len() >= self.num_products {
            return bad("at least one product must be on sale from week 0".into());
        }
        if !self.launch_schedule.values().any(|&w| w >= self.num_weeks_hist) {
            return bad("no launch inside the future window".into());
        }
        if !(self.share_decay_on_launch > 0.0 && self.share_decay_on_launch < 1.0) {
            return bad("share_decay_on_launch must be in (0, 1)".into());
        }
        if !(self.noise_sd >= 0.0 && self.total_noise_sd >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        if !(self.stage1_bias_injection > -1.0) {
            return bad("stage1_bias_injection must exceed -1".into());
        }
        if let TotalCurve::Seasonal { period, .. } = self.category_total_curve {
            if !(period > 0.0) {
                return bad("seasonal period must be positive".into());
            }
        }
        if let Some(w) = (0..weeks).find(|&w| !(self.category_total_curve.at(w) > 0.0)) {
            return bad(format!("category total curve is not positive at week {w}"));
        }
        Ok(())
    }

    pub fn from_kv(mut kv: KvConfig) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(v) = kv.take("num_products")? {
            cfg.num_products = v;
        }
        if let Some(v) = kv.take("num_weeks_hist")? {
            cfg.num_weeks_hist = v;
        }
        if let Some(v) = kv.take("num_weeks_future")? {
            cfg.num_weeks_future = v;
        }
        if let Some(spec) = kv.take::<String>("launches")? {
            cfg.launch_schedule = parse_launches(&spec)?;
        }
        let curve: Option<String> = kv.take("curve")?;
        let base: Option<f64> = kv.take("curve_base")?;
        let slope: Option<f64> = kv.take("curve_slope")?;
        let amplitude: Option<f64> = kv.take("curve_amplitude")?;
        let period: Option<f64> = kv.take("curve_period")?;
        let (b0, s0, a0, p0) = match cfg.category_total_curve {
            TotalCurve::Flat { base } => (base, 0.0, 0.2, 52.0),
            TotalCurve::LinearTrend { base, slope } => (base, slope, 0.2, 52.0),
            TotalCurve::Seasonal {
                base,
                amplitude,
                period,
            } => (base, 0.0, amplitude, period),
        };
        let (base, slope, amplitude, period) =
            (base.unwrap_or(b0), slope.unwrap_or(s0), amplitude.unwrap_or(a0), period.unwrap_or(p0));
        let kind = curve.unwrap_or_else(|| curve_name(&cfg.category_total_curve).to_string());
        cfg.category_total_curve = match kind.as_str() {
            "flat" => TotalCurve::Flat { base },
            "linear" => TotalCurve::LinearTrend { base, slope },
            "seasonal" => TotalCurve::Seasonal {
                base,
                amplitude,
                period,
            },
            other => return Err(Error::Config(format!("unknown curve '{other}'"))),
        };
        if let Some(v) = kv.take("total_noise_sd")? {
            cfg.total_noise_sd = v;
        }
        if let Some(v) = kv.take("share_decay_on_launch")? {
            cfg.share_decay_on_launch = v;
        }
        if let Some(v) = kv.take("noise_sd")? {
            cfg.noise_sd = v;
        }
        if let Some(v) = kv.take("stage1_bias_injection")? {
            cfg.stage1_bias_injection = v;
        }
        if let Some(v) = kv.take("seed")? {
            cfg.seed = v;
        }
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.set("num_products", self.num_products);
        kv.set("num_weeks_hist", self.num_weeks_hist);
        kv.set("num_weeks_future", self.num_weeks_future);
        let launches: Vec<String> = self.launch_schedule.iter().map(|(p, w)| format!("{p}@{w}")).collect();
        kv.set("launches", launches.join(","));
        kv.set("curve", curve_name(&self.category_total_curve));
        match self.category_total_curve {
            TotalCurve::Flat { base } => kv.set("curve_base", base),
            TotalCurve::LinearTrend { base, slope } => {
                kv.set("curve_base", base);
                kv.set("curve_slope", slope);
            }
            TotalCurve::Seasonal {
                base,
                amplitude,
                period,
            } => {
                kv.set("curve_base", base);
                kv.set("curve_amplitude", amplitude);
                kv.set("curve_period", period);
            }
        }
        kv.set("total_noise_sd", self.total_noise_sd);
        kv.set("share_decay_on_launch", self.share_decay_on_launch);
        kv.set("noise_sd", self.noise_sd);
        kv.set("stage1_bias_injection", self.stage1_bias_injection);
        kv.set("seed", self.seed);
        kv
    }
}

fn curve_name(c: &TotalCurve) -> &'static str {
    match c {
        TotalCurve::Flat { .. } => "flat",
        TotalCurve::LinearTrend { .. } => "linear",
        TotalCurve::Seasonal { .. } => "seasonal",
    }
}

/// Parses `P03@40,P04@88`.
fn parse_launches(spec: &str) -> Result<BTreeMap<String, u32>> {
    let mut out = BTreeMap::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (p, w) = item
            .split_once('@')
            .ok_or_else(|| Error::Config(format!("launch '{item}' is not product@week")))?;
        let w: u32 = w
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("launch '{item}' has a bad week")))?;
        if out.insert(p.trim().to_string(), w).is_some() {
            return Err(Error::Config(format!("product {p} launched twice")));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruthRow<T> {
    pub product_id: String,
    pub week: u32,
    pub true_sales: T,
}

/// A generated dataset plus the withheld future sales.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario<T> {
    pub dataset: PanelDataset<T>,
    /// One entry per future row, in dataset row order.
    pub truth: Vec<TruthRow<T>>,
}

impl<T: Scalar> Scenario<T> {
    pub fn truth_values(&self) -> Vec<T> {
        self.truth.iter().map(|t| t.true_sales).collect()
    }
}

struct Product {
    id: String,
    launch: u32,
    initial: bool,
    latent: f64,
    proxy_noise: f64,
}

pub fn generate<T: Scalar>(config: &ScenarioConfig) -> Result<Scenario<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let mut products: Vec<Product> = (0..config.num_products)
        .map(|i| {
            let id = product_id(i);
            let launch = config.launch_schedule.get(&id).copied();
            Product {
                initial: launch.is_none(),
                launch: launch.unwrap_or(0),
                id,
                latent: 0.0,
                proxy_noise: 0.0,
            }
        })
        .collect();
    for p in &mut products {
        p.latent = LATENT_SD * normal();
        p.proxy_noise = PROXY_NOISE * normal();
    }

    let hist = config.num_weeks_hist;
    let weeks = hist + config.num_weeks_future;
    let lag = config.num_weeks_future;
    let decay = config.share_decay_on_launch;

    // sales[w][product index], None when not on sale.
    let mut sales: Vec<Vec<Option<f64>>> = Vec::with_capacity(weeks as usize);
    let mut records = Vec::new();
    let mut truth = Vec::new();
    let mut future_totals = BTreeMap::new();

    for w in 0..weeks {
        // Entrant takes exactly `decay` of the week's expected share.
        for i in 0..products.len() {
            if !products[i].initial && products[i].launch == w {
                let mass: f64 = products
                    .iter()
                    .filter(|q| q.initial || q.launch < w)
                    .map(|q| q.latent.exp())
                    .sum();
                products[i].latent = (decay / (1.0 - decay)).ln() + mass.ln();
            }
        }
        let curve_total = config.category_total_curve.at(w) * (config.total_noise_sd * normal()).exp();
        let demand_noise = 1.0 + DEMAND_INDEX_NOISE * normal();

        let active: Vec<usize> = (0..products.len())
            .filter(|&i| products[i].initial || products[i].launch <= w)
            .collect();
        let mut shares: Vec<f64> = active
            .iter()
            .map(|&i| products[i].latent.exp() * (config.noise_sd * normal()).exp())
            .collect();
        let norm: f64 = shares.iter().sum();
        for s in &mut shares {
            *s /= norm;
        }

        let mut week_sales = vec![None; products.len()];
        for (&i, &s) in active.iter().zip(&shares) {
            week_sales[i] = Some(curve_total * s);
        }
        sales.push(week_sales);

        let is_future = w >= hist;
        let last_launch = config.launch_schedule.values().filter(|&&l| l <= w).max();
        let since_launch = last_launch.map_or(AGE_CAP, |&l| (w - l).min(AGE_CAP));
        let bias = if is_future { 1.0 + config.stage1_bias_injection } else { 1.0 };
        let demand_index = curve_total * demand_noise * bias;

        // Product ids are zero-padded, so index order is id order.
        let mut total = T::zero();
        for &i in &active {
            let p = &products[i];
            let age = if p.initial { w + AGE_CAP } else { w - p.launch };
            let lagged = if w >= lag {
                sales[(w - lag) as usize][i].unwrap_or(0.0)
            } else {
                0.0
            };
            let features = vec![
                T::of(age as f64),
                T::of(since_launch as f64),
                T::of(active.len() as f64),
                T::of(p.latent + p.proxy_noise),
                T::of(demand_index),
                T::of(lagged),
            ];
            let s = T::of(sales[w as usize][i].expect("active product has sales"));
            total = total + s;
            records.push(PanelRecord {
                product_id: p.id.clone(),
                week: w,
                features,
                actual_sales: (!is_future).then_some(s),
            });
            if is_future {
                truth.push(TruthRow {
                    product_id: p.id.clone(),
                    week: w,
                    true_sales: s,
                });
            }
        }
        if is_future {
            future_totals.insert(w, total);
        }
    }

    let names = (0..FEATURE_COUNT).map(|j| format!("f_{j}")).collect();
    let dataset = PanelDataset::new(records, names, &future_totals)?;
    Ok(Scenario { dataset, truth })
}

/// Writes `panel.csv` (all rows), `train.csv` (history), `test.csv` (future
/// rows) and `truth.csv` (withheld future sales) into `dir`.
pub fn write_scenario<T: Scalar>(scenario: &Scenario<T>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let ds = &scenario.dataset;
    let open = |name: &str| -> Result<std::io::BufWriter<File>> {
        let path = dir.join(name);
        Ok(std::io::BufWriter::new(File::create(&path).map_err(Error::io(path))?))
    };
    write_panel_rows(ds, 0..ds.n(), open("panel.csv")?)?;
    write_panel_rows(ds, 0..ds.m(), open("train.csv")?)?;
    write_panel_rows(ds, ds.m()..ds.n(), open("test.csv")?)?;
    write_truth(&scenario.truth, open("truth.csv")?)
}

pub fn write_truth<T: Scalar, W: Write>(truth: &[TruthRow<T>], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let persist = |e: csv::Error| Error::Persistence(format!("writing truth CSV: {e}"));
    w.write_record(["product_id", "week", "true_sales"]).map_err(persist)?;
    for t in truth {
        w.write_record([t.product_id.clone(), t.week.to_string(), t.true_sales.to_string()])
            .map_err(persist)?;
    }
    w.flush().map_err(|e| Error::Persistence(format!("writing truth CSV: {e}")))
}

pub fn read_truth<T: Scalar>(path: &Path) -> Result<Vec<TruthRow<T>>> {
    let file = File::open(path).map_err(Error::io(path))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("{}: missing column '{name}'", path.display())))
    };
    let (pc, wc, sc) = (col("product_id")?, col("week")?, col("true_sales")?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let bad = |what: &str| Error::Validation(format!("{}: bad {what} '{}'", path.display(), rec.as_slice()));
        out.push(TruthRow {
            product_id: field(pc).to_string(),
            week: field(wc).parse().map_err(|_| bad("week"))?,
            true_sales: field(sc).parse().map_err(|_| bad("true_sales"))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips_as_text() {
        let cfg = ScenarioConfig::default();
        cfg.validate().unwrap();
        let back = ScenarioConfig::from_kv(KvConfig::parse(&cfg.to_kv().to_text()).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_configs_rejected() {
        let no_future_launch = ScenarioConfig {
            launch_schedule: BTreeMap::from([(product_id(3), 40)]),
            ..ScenarioConfig::default()
        };
        assert!(matches!(no_future_launch.validate(), Err(Error::Config(_))));
        let clash = ScenarioConfig {
            launch_schedule: BTreeMap::from([(product_id(3), 88), (product_id(4), 88)]),
            ..ScenarioConfig::default()
        };
        assert!(clash.validate().is_err());
        let unknown = ScenarioConfig {
            launch_schedule: BTreeMap::from([(product_id(9), 88)]),
            ..ScenarioConfig::default()
        };
        assert!(unknown.validate().is_err());
        let mut kv = ScenarioConfig::default().to_kv();
        kv.set("curve", "wiggly");
        assert!(ScenarioConfig::from_kv(kv).is_err());
    }

    #[test]
    fn single_product_sells_the_whole_total() {
        let cfg = ScenarioConfig {
            num_products: 2,
            launch_schedule: BTreeMap::from([(product_id(1), 85)]),
            noise_sd: 0.0,
            ..ScenarioConfig::default()
        };
        let sc = generate::<f64>(&cfg).unwrap();
        for g in sc.dataset.groups().iter().filter(|g| g.count == 1) {
            let r = &sc.dataset.records()[g.members[0]];
            if let Some(s) = r.actual_sales {
                assert_eq!(s, g.category_total);
            }
        }
        assert!(sc.dataset.groups().iter().filter(|g| g.count == 1).count() >= 80);
    }

    #[test]
    fn truth_covers_future_rows_in_order() {
        let sc = generate::<f64>(&ScenarioConfig::default()).unwrap();
        let ds = &sc.dataset;
        assert_eq!(sc.truth.len(), ds.n() - ds.m());
        for (t, r) in sc.truth.iter().zip(&ds.records()[ds.m()..]) {
            assert_eq!((t.product_id.as_str(), t.week), (r.product_id.as_str(), r.week));
        }
    }
}
