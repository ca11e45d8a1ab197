use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ingest::{Country, PoiCategory, Tac};
use crate::time::LocalDay;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisitModel {
    /// Daily stop probability of a stay; stays last 1 + Geometric(stay_p) days.
    pub stay_p: f64,
    pub max_stay_days: u32,
    /// Probability of each further visit after the previous one.
    pub revisit_prob: f64,
    /// Bounds on whole silent days between two visits.
    pub min_revisit_gap_days: u32,
    pub max_revisit_gap_days: u32,
}

impl Default for VisitModel {
    fn default() -> Self {
        VisitModel {
            stay_p: 0.35,
            max_stay_days: 14,
            revisit_prob: 0.25,
            min_revisit_gap_days: 3,
            max_revisit_gap_days: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MovementModel {
    pub step_prob_per_hour: f64,
    /// Preferred radius for the next tower; wider only when no tower of the
    /// drawn category lies within it.
    pub max_hop_m: f64,
    /// Local `[start, end)` hours in which subscribers emit records.
    pub active_hours: [u8; 2],
}

impl Default for MovementModel {
    fn default() -> Self {
        MovementModel {
            step_prob_per_hour: 0.3,
            max_hop_m: 6000.0,
            active_hours: [8, 23],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthEvent {
    pub name: String,
    pub start: String,
    pub end: String,
    /// Arrival intensity on event days relative to ordinary days.
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TacSpec {
    pub tac: String,
    pub brand: String,
    pub model: String,
    pub price_usd: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficModel {
    pub planted_beta: f64,
    /// Relative gaussian noise on counts.
    pub noise_sigma: f64,
    pub n_stations: usize,
    pub window_minutes: u32,
}

impl Default for TrafficModel {
    fn default() -> Self {
        TrafficModel {
            planted_beta: 4.2,
            noise_sigma: 0.05,
            n_stations: 50,
            window_minutes: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub start_date: String,
    pub n_days: u32,
    pub utc_offset_minutes: i32,
    pub home_country: String,
    pub n_towers: usize,
    pub min_tower_separation_m: f64,
    pub n_road_edges: usize,
    pub n_subscribers: usize,
    /// Share of subscribers registered in the home country.
    pub local_share: f64,
    /// Registry country shares among visitors.
    pub country_mix: BTreeMap<String, f64>,
    pub visits: VisitModel,
    /// Per-country category shares; countries not listed use `default_interest`.
    pub interest_mix: BTreeMap<String, BTreeMap<String, f64>>,
    pub default_interest: BTreeMap<String, f64>,
    pub events: Vec<SynthEvent>,
    pub movement: MovementModel,
    pub records_per_active_hour: f64,
    pub tac_pool: Vec<TacSpec>,
    /// Share of subscribers whose records carry no TAC.
    pub tac_missing_share: f64,
    pub traffic: TrafficModel,
}

fn shares(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn event(name: &str, start: &str, end: &str) -> SynthEvent {
    SynthEvent {
        name: name.into(),
        start: start.into(),
        end: end.into(),
        multiplier: 3.0,
    }
}

fn tac(tac: &str, brand: &str, model: &str, price_usd: f64, weight: f64) -> TacSpec {
    TacSpec {
        tac: tac.into(),
        brand: brand.into(),
        model: model.into(),
        price_usd,
        weight,
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            start_date: "2015-07-01".into(),
            n_days: 75,
            utc_offset_minutes: 120,
            home_country: "AD".into(),
            n_towers: 200,
            min_tower_separation_m: 800.0,
            n_road_edges: 500,
            n_subscribers: 10_000,
            local_share: 0.1,
            country_mix: shares(&[("ES", 0.55), ("FR", 0.35), ("GB", 0.04), ("RU", 0.03), ("DE", 0.03)]),
            visits: VisitModel::default(),
            interest_mix: [
                (
                    "ES",
                    shares(&[
                        ("shopping", 0.5),
                        ("nature", 0.2),
                        ("culture", 0.1),
                        ("sports", 0.1),
                        ("wellness", 0.1),
                    ]),
                ),
                (
                    "FR",
                    shares(&[("shopping", 0.2), ("nature", 0.4), ("culture", 0.1), ("sports", 0.3)]),
                ),
                ("RU", shares(&[("shopping", 0.6), ("wellness", 0.3), ("other", 0.1)])),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
            default_interest: shares(&[
                ("shopping", 0.3),
                ("nature", 0.3),
                ("culture", 0.2),
                ("wellness", 0.1),
                ("other", 0.1),
            ]),
            events: vec![
                event("Storia by Cirque du Soleil", "2015-07-15", "2015-07-20"),
                event("Volta als Ports d'Andorra", "2015-07-12", "2015-07-12"),
                event("MTB Masters World Championships", "2015-08-23", "2015-08-27"),
                event("Tour of Spain", "2015-08-31", "2015-09-03"),
                event("UCI Trial Masters World Championships", "2015-09-01", "2015-09-06"),
            ],
            movement: MovementModel::default(),
            records_per_active_hour: 1.5,
            tac_pool: vec![
                tac("35875106", "Apple", "iPhone 6", 699.0, 3.0),
                tac("35332206", "Apple", "iPhone 5s", 549.0, 2.0),
                tac("35730506", "Samsung", "Galaxy S6", 649.0, 2.0),
                tac("35226005", "Samsung", "Galaxy S4 mini", 249.0, 2.0),
                tac("35391805", "Sony", "Xperia Z3", 499.0, 1.0),
                tac("86372502", "Huawei", "Ascend P7", 299.0, 1.0),
                tac("35404906", "LG", "G3", 399.0, 1.0),
                tac("35815904", "Nokia", "Lumia 530", 89.0, 1.0),
                tac("35268605", "Motorola", "Moto G", 179.0, 1.5),
            ],
            tac_missing_share: 0.05,
            traffic: TrafficModel::default(),
        }
    }
}

/// Checked, index-friendly form of a config.
#[derive(Debug, Clone)]
pub(crate) struct Plan {
    pub first_day: LocalDay,
    pub home: Country,
    pub countries: Vec<Country>,
    pub country_weights: Vec<f64>,
    /// Per entry of `countries`, then the home country last.
    pub interests: Vec<[f64; 6]>,
    pub events: Vec<(LocalDay, LocalDay, f64)>,
    pub tacs: Vec<Tac>,
}

fn sums_to_one(field: &str, values: impl Iterator<Item = f64>, errors: &mut Vec<String>) {
    let mut total = 0.0;
    let mut bad = false;
    for v in values {
        bad |= !(v.is_finite() && v >= 0.0);
        total += v;
    }
    if bad {
        errors.push(format!("{field}: shares must be finite and nonnegative"));
    } else if (total - 1.0).abs() > 1e-9 {
        errors.push(format!("{field}: shares sum to {total}, expected 1"));
    }
}

fn interest_vector(field: &str, mix: &BTreeMap<String, f64>, errors: &mut Vec<String>) -> [f64; 6] {
    let mut v = [0.0; 6];
    for (k, share) in mix {
        match PoiCategory::parse(k) {
            Some(c) => v[c.index()] = *share,
            None => errors.push(format!("{field}.{k}: unknown category")),
        }
    }
    sums_to_one(field, mix.values().copied(), errors);
    v
}

impl SynthConfig {
    /// Validates every field, reporting all problems at once.
    pub(crate) fn plan(&self) -> Result<Plan, Vec<String>> {
        let mut errors = Vec::new();
        let mut rate = |field: &str, v: f64, lo: f64, hi: f64| {
            if !(v.is_finite() && v >= lo && v <= hi) {
                errors.push(format!("{field}: must be within [{lo}, {hi}]"));
            }
        };
        rate("local_share", self.local_share, 0.0, 1.0);
        rate("records_per_active_hour", self.records_per_active_hour, 0.0, 50.0);
        rate("tac_missing_share", self.tac_missing_share, 0.0, 1.0);
        rate("visits.revisit_prob", self.visits.revisit_prob, 0.0, 0.95);
        rate(
            "movement.step_prob_per_hour",
            self.movement.step_prob_per_hour,
            0.0,
            1.0,
        );
        rate("traffic.noise_sigma", self.traffic.noise_sigma, 0.0, 10.0);
        rate("movement.max_hop_m", self.movement.max_hop_m, 0.0, f64::MAX);
        rate("min_tower_separation_m", self.min_tower_separation_m, 0.0, 5000.0);
        if !(self.visits.stay_p > 0.0 && self.visits.stay_p <= 1.0) {
            errors.push("visits.stay_p: must be within (0, 1]".into());
        }
        if !(self.traffic.planted_beta.is_finite() && self.traffic.planted_beta > 0.0) {
            errors.push("traffic.planted_beta: must be positive".into());
        }
        if self.traffic.window_minutes == 0 || (24 * 60) % self.traffic.window_minutes != 0 {
            errors.push("traffic.window_minutes: must divide a day".into());
        }
        if self.utc_offset_minutes.abs() >= 24 * 60 {
            errors.push("utc_offset_minutes: must be within one day".into());
        }
        if self.n_days == 0 {
            errors.push("n_days: must be positive".into());
        }
        if self.n_towers < 2 {
            errors.push("n_towers: must be at least 2".into());
        }
        if self.n_road_edges + 1 < self.n_towers {
            errors.push("n_road_edges: must be at least n_towers - 1".into());
        }
        if self.visits.max_stay_days == 0 {
            errors.push("visits.max_stay_days: must be positive".into());
        }
        if self.visits.min_revisit_gap_days == 0 || self.visits.min_revisit_gap_days > self.visits.max_revisit_gap_days
        {
            errors.push("visits.min_revisit_gap_days: must be positive and at most max_revisit_gap_days".into());
        }
        let [h0, h1] = self.movement.active_hours;
        if !(h0 < h1 && h1 <= 24) {
            errors.push("movement.active_hours: must be increasing hours within 0..=24".into());
        }

        let first_day = LocalDay::parse(&self.start_date);
        if first_day.is_none() {
            errors.push("start_date: expected YYYY-MM-DD".into());
        }
        let home = Country::new(&self.home_country);
        if home.is_none() {
            errors.push("home_country: expected a 2-letter country code".into());
        }

        let mut countries = Vec::new();
        let mut country_weights = Vec::new();
        for (k, share) in &self.country_mix {
            match Country::new(k) {
                Some(c) if Some(c) == home => {
                    errors.push(format!("country_mix.{k}: home country is set by local_share"))
                }
                Some(c) => {
                    countries.push(c);
                    country_weights.push(*share);
                }
                None => errors.push(format!("country_mix.{k}: expected a 2-letter country code")),
            }
        }
        if self.local_share < 1.0 {
            sums_to_one("country_mix", self.country_mix.values().copied(), &mut errors);
        }
        for k in self.interest_mix.keys() {
            if Country::new(k).is_none() {
                errors.push(format!("interest_mix.{k}: expected a 2-letter country code"));
            }
        }
        let default_interest = interest_vector("default_interest", &self.default_interest, &mut errors);
        let mut interests: Vec<[f64; 6]> = countries
            .iter()
            .map(|c| match self.interest_mix.get(c.as_str()) {
                Some(mix) => interest_vector(&format!("interest_mix.{c}"), mix, &mut errors),
                None => default_interest,
            })
            .collect();
        interests.push(match home.and_then(|h| self.interest_mix.get(h.as_str())) {
            Some(mix) => interest_vector(&format!("interest_mix.{}", self.home_country), mix, &mut errors),
            None => default_interest,
        });

        let mut events = Vec::new();
        for (i, e) in self.events.iter().enumerate() {
            let (a, b) = (LocalDay::parse(&e.start), LocalDay::parse(&e.end));
            match (a, b) {
                (Some(a), Some(b)) if a <= b => events.push((a, b, e.multiplier)),
                (Some(_), Some(_)) => errors.push(format!("events[{i}].end: before start")),
                _ => errors.push(format!("events[{i}]: dates must be YYYY-MM-DD")),
            }
            if e.name.is_empty() {
                errors.push(format!("events[{i}].name: must not be empty"));
            }
            if !(e.multiplier.is_finite() && e.multiplier > 0.0) {
                errors.push(format!("events[{i}].multiplier: must be positive"));
            }
        }

        let mut tacs = Vec::new();
        for (i, t) in self.tac_pool.iter().enumerate() {
            match Tac::new(&t.tac) {
                Some(tac) if tacs.contains(&tac) => errors.push(format!("tac_pool[{i}].tac: duplicate")),
                Some(tac) => tacs.push(tac),
                None => errors.push(format!("tac_pool[{i}].tac: must be 8 digits")),
            }
            if !(t.price_usd.is_finite() && t.price_usd > 0.0) {
                errors.push(format!("tac_pool[{i}].price_usd: must be positive"));
            }
            if !(t.weight.is_finite() && t.weight > 0.0) {
                errors.push(format!("tac_pool[{i}].weight: must be positive"));
            }
        }
        if self.tac_pool.is_empty() && self.tac_missing_share < 1.0 {
            errors.push("tac_pool: must not be empty unless tac_missing_share is 1".into());
        }

        if !errors.is_empty() {
            return Err(errors);
        }
        Ok(Plan {
            first_day: first_day.expect("checked"),
            home: home.expect("checked"),
            countries,
            country_weights,
            interests,
            events,
            tacs,
        })
    }
}
