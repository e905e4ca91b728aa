//! Builders for the bundled scenarios. Output depends only on the seed.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use super::scenario::{Action, DeviceSpec, Expect, Expectations, Scenario, TimedAction};
use crate::cloud::{CloudConfig, CompositionRequest};
use crate::gateway::GatewayConfig;
use crate::model::{decode_registration, encode_registration, Location, QosProfile, ServiceDescription, ThingDescription};

/// Names accepted by [`bundled`].
pub const BUNDLED: [&str; 3] = ["smoke", "e2e", "churn"];

struct Template {
    concept: &'static str,
    inputs: &'static [&'static str],
    outputs: &'static [&'static str],
    keywords: &'static [&'static str],
}

const fn t(
    concept: &'static str,
    inputs: &'static [&'static str],
    outputs: &'static [&'static str],
    keywords: &'static [&'static str],
) -> Template {
    Template {
        concept,
        inputs,
        outputs,
        keywords,
    }
}

/// Services a physical device exposes; the thing shares the concept.
const DEVICES: &[Template] = &[
    t("TemperatureSensor", &[], &["Celsius"], &["temperature"]),
    t("IndoorTemperatureSensor", &[], &["Celsius"], &["temperature", "indoor"]),
    t("OutdoorTemperatureSensor", &[], &["Celsius"], &["temperature", "outdoor"]),
    t("HumiditySensor", &[], &["Humidity"], &["humidity"]),
    t("PressureSensor", &[], &["Pressure"], &["pressure"]),
    t("LightSensor", &[], &["Illuminance"], &["light", "lux"]),
    t("MotionSensor", &[], &["MotionEvent"], &["motion"]),
    t("PresenceSensor", &[], &["MotionEvent"], &["presence"]),
    t("CO2Sensor", &[], &["Co2Level"], &["co2", "air"]),
    t("SmokeDetector", &[], &["FireAlert"], &["smoke", "fire"]),
    t("AirQualitySensor", &[], &["Co2Level"], &["air"]),
    t("NoiseSensor", &[], &["NoiseLevel"], &["noise"]),
    t("WaterLevelSensor", &[], &["WaterLevel"], &["water"]),
    t("EnergyMeter", &[], &["EnergyReading"], &["energy"]),
    t("GPSReceiver", &[], &["Position"], &["gps"]),
    t("DimmableLight", &["SetpointCommand"], &[], &["light", "dim"]),
    t("ColorLight", &["SetpointCommand"], &[], &["light", "color"]),
    t("DoorLock", &["SwitchCommand"], &[], &["door", "lock"]),
    t("WaterValve", &["SwitchCommand"], &[], &["water", "valve"]),
    t("Thermostat", &["SetpointCommand"], &["Celsius"], &["temperature", "heating"]),
    t("Fan", &["SwitchCommand"], &[], &["fan"]),
    t("Heater", &["SwitchCommand"], &[], &["heating"]),
    t("Blind", &["SetpointCommand"], &[], &["window"]),
    t("Siren", &["SwitchCommand"], &[], &["alarm"]),
    t("Pump", &["SwitchCommand"], &[], &["water"]),
    t("IPCamera", &[], &["VideoStream"], &["video"]),
    t("ThermalCamera", &[], &["VideoStream", "Celsius"], &["video", "thermal"]),
];

/// Processing services hosted next to a device.
const FUNCTIONS: &[Template] = &[
    t("UnitConversion", &["Celsius"], &["Fahrenheit"], &["convert"]),
    t("Aggregation", &["Measurement"], &["DailyReport"], &["report"]),
    t("AnomalyDetection", &["Temperature"], &["Alert"], &["anomaly"]),
    t("Forecasting", &["Measurement"], &["Forecast"], &["forecast"]),
    t("AlertService", &["Alert"], &["Message"], &["alert"]),
    t("SmsGateway", &["Alert"], &["Message"], &["sms"]),
    t("Storage", &["Measurement"], &["Report"], &["archive"]),
];

fn template(concept: &str) -> &'static Template {
    DEVICES
        .iter()
        .chain(FUNCTIONS)
        .find(|t| t.concept == concept)
        .expect("concept in catalogue")
}

fn round(x: f64, digits: i32) -> f64 {
    let p = 10f64.powi(digits);
    (x * p).round() / p
}

fn random_qos(rng: &mut ChaCha8Rng) -> QosProfile {
    QosProfile {
        delay_ms: round(rng.random_range(5.0..200.0), 1),
        price: round(rng.random_range(0.0..10.0), 2),
        reliability: round(rng.random_range(0.8..1.0), 3),
        availability: round(rng.random_range(0.9..1.0), 3),
        security_level: rng.random_range(1..=5),
    }
}

fn service(t: &Template, path: String, qos: QosProfile) -> ServiceDescription {
    let mut s = ServiceDescription::new(t.concept, path, qos);
    s.inputs = t.inputs.iter().map(|c| c.to_string()).collect();
    s.outputs = t.outputs.iter().map(|c| c.to_string()).collect();
    s.keywords = t.keywords.iter().map(|c| c.to_string()).collect();
    s
}

fn gateway_location(ordinal: u32) -> Location {
    Location {
        latitude: 48.0 + ordinal as f64 * 0.01,
        longitude: 11.0 + ordinal as f64 * 0.01,
    }
}

/// Threshold of the bundled scenarios: siblings under `Sensor` (0.75) no
/// longer answer for each other, so misses reach the overlay.
const STRICT_SIMILARITY: f64 = 0.8;

fn gateways(n: u32, cloud: bool) -> Vec<GatewayConfig> {
    (1..=n)
        .map(|i| {
            let mut g = GatewayConfig::new(i, format!("gw-{i}"), "../data/fog.tax");
            g.location = gateway_location(i);
            g.min_similarity = STRICT_SIMILARITY;
            if i > 1 {
                g.bootstrap = Some("gw-1".into());
            }
            if cloud {
                g.cloud = Some("cloud".into());
            }
            g
        })
        .collect()
}

/// A device of kind `kind` with its own service first and then `extra`.
fn device(
    rng: &mut ChaCha8Rng,
    name: &str,
    gateway: &GatewayConfig,
    kind: &Template,
    extra: &[&Template],
) -> DeviceSpec {
    let base = gateway.location;
    let location = Location {
        latitude: round(base.latitude + rng.random_range(-0.005..0.005), 5),
        longitude: round(base.longitude + rng.random_range(-0.005..0.005), 5),
    };
    let mut thing = ThingDescription::new(name, kind.concept, location);
    thing.endpoint = format!("coap://{name}.local");
    let services: Vec<ServiceDescription> = std::iter::once(kind)
        .chain(extra.iter().copied())
        .enumerate()
        .map(|(i, t)| service(t, format!("/{name}/s{i}"), random_qos(rng)))
        .collect();
    let registration: Value =
        serde_json::from_str(&encode_registration(&thing, &services)).expect("encoder emits JSON");
    DeviceSpec {
        name: name.into(),
        gateway: gateway.address.clone(),
        registration,
        auto_refresh: true,
    }
}

fn at(at_ms: u64, action: Action) -> TimedAction {
    TimedAction { at_ms, action }
}

fn query(rng: &mut ChaCha8Rng, gateway: &str, concept: &str) -> Action {
    let t = template(concept);
    let q = match rng.random_range(0..3) {
        0 => format!("rt={concept}"),
        1 => format!("rt={concept}&kw={}", t.keywords.choose(rng).expect("keywords")),
        _ => format!("rt={concept}&k=3"),
    };
    Action::Query {
        gateway: gateway.into(),
        query: q,
        expect: Some(Expect::Hit),
    }
}

/// Two gateways, three devices, two cross-gateway queries and a composition
/// asked twice.
pub fn smoke() -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let gws = gateways(2, true);
    let devices = vec![
        device(&mut rng, "d-1", &gws[0], template("TemperatureSensor"), &[]),
        device(
            &mut rng,
            "d-2",
            &gws[1],
            template("HumiditySensor"),
            &[template("AnomalyDetection"), template("UnitConversion")],
        ),
        device(&mut rng, "d-3", &gws[1], template("DimmableLight"), &[]),
    ];
    let request = CompositionRequest::new(BTreeSet::new(), BTreeSet::from(["Alert".to_string()]));
    let timeline = vec![
        at(100, Action::Register { device: "d-1".into() }),
        at(200, Action::Register { device: "d-2".into() }),
        at(300, Action::Register { device: "d-3".into() }),
        at(2000, query(&mut rng, "gw-2", "TemperatureSensor")),
        at(2500, query(&mut rng, "gw-1", "DimmableLight")),
        at(
            3000,
            Action::Compose {
                request: request.clone(),
                expect: Some(Expect::Hit),
            },
        ),
        at(
            3500,
            Action::Compose {
                request,
                expect: Some(Expect::Hit),
            },
        ),
        at(4000, Action::Audit { republish: false }),
    ];
    Scenario {
        name: "smoke".into(),
        links: Default::default(),
        maintenance: Default::default(),
        gateways: gws,
        cloud: Some(CloudConfig::new("cloud", "../data/cloud.tax")),
        devices,
        timeline,
        settle_ms: 1000,
        expect: Expectations {
            query_expectations: true,
            all_queries_succeed: true,
            hop_bounds: true,
            composition_expectations: true,
            final_ring_audit: true,
            ..Default::default()
        },
    }
}

/// Devices carrying `count` services in total, spread over `gws`.
fn populate(
    rng: &mut ChaCha8Rng,
    prefix: &str,
    gws: &[&GatewayConfig],
    count: usize,
) -> Vec<DeviceSpec> {
    let mut out = Vec::new();
    let mut left = count;
    while left > 0 {
        let extra_n = rng.random_range(0..=2).min(left - 1);
        let kind = DEVICES.choose(rng).expect("catalogue");
        let extra: Vec<&Template> = (0..extra_n).map(|_| FUNCTIONS.choose(rng).expect("catalogue")).collect();
        let gw = gws.choose(rng).expect("gateways");
        let name = format!("{prefix}-{}", out.len() + 1);
        out.push(device(rng, &name, gw, kind, &extra));
        left -= 1 + extra_n;
    }
    out
}

fn concepts_of(d: &DeviceSpec) -> Vec<String> {
    let (_, services) = decode_registration(&d.registration.to_string()).expect("generated registration");
    services.into_iter().map(|s| s.functional_concept).collect()
}

/// Eight gateways, a hundred services and fifty queries, each for a
/// registered concept from a random gateway.
pub fn e2e(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gws = gateways(8, false);
    let refs: Vec<&GatewayConfig> = gws.iter().collect();
    let devices = populate(&mut rng, "d", &refs, 100);
    let mut timeline = Vec::new();
    let mut now = 0;
    for d in &devices {
        now += 100;
        timeline.push(at(now, Action::Register { device: d.name.clone() }));
    }
    let concepts: Vec<String> = devices.iter().flat_map(concepts_of).collect();
    now += 2000;
    for _ in 0..50 {
        now += 400;
        let concept = concepts.choose(&mut rng).expect("concepts").clone();
        let gw = refs.choose(&mut rng).expect("gateways").address.clone();
        timeline.push(at(now, query(&mut rng, &gw, &concept)));
    }
    timeline.push(at(now + 1000, Action::Audit { republish: false }));
    Scenario {
        name: "e2e".into(),
        links: Default::default(),
        maintenance: Default::default(),
        gateways: gws,
        cloud: None,
        devices,
        timeline,
        settle_ms: 2000,
        expect: Expectations {
            query_expectations: true,
            all_queries_succeed: true,
            hop_bounds: true,
            final_ring_audit: true,
            ..Default::default()
        },
    }
}

/// Eight gateways, then five joins, three graceful leaves and one crash
/// while a hundred queries run. Ends with a republish round and an audit.
pub fn churn(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gws = gateways(13, false);
    let initial: Vec<&GatewayConfig> = gws[..8].iter().collect();
    let mut devices = populate(&mut rng, "d", &initial, 80);

    // Departures among gw-2..gw-8 so the bootstrap stays up.
    let mut pool: Vec<String> = gws[1..8].iter().map(|g| g.address.clone()).collect();
    let mut pick = |rng: &mut ChaCha8Rng| pool.remove(rng.random_range(0..pool.len()));
    let leaves: Vec<String> = (0..3).map(|_| pick(&mut rng)).collect();
    let kill = pick(&mut rng);

    let mut events: Vec<TimedAction> = Vec::new();
    for (i, d) in devices.iter().enumerate() {
        events.push(at(100 + 100 * i as u64, Action::Register { device: d.name.clone() }));
    }
    // (time, gateway, up) membership changes in time order.
    let mut changes: Vec<(u64, String, bool)> = Vec::new();
    for (i, g) in gws[8..].iter().enumerate() {
        let t = 30_000 + 40_000 * i as u64;
        changes.push((t, g.address.clone(), true));
        events.push(at(t, Action::JoinGateway { gateway: g.address.clone() }));
        let joiner = [g];
        for d in populate(&mut rng, &format!("j{}", i + 1), &joiner, 4) {
            events.push(at(t + 3000, Action::Register { device: d.name.clone() }));
            devices.push(d);
        }
    }
    for (i, g) in leaves.iter().enumerate() {
        let t = 50_000 + 60_000 * i as u64;
        changes.push((t, g.clone(), false));
        events.push(at(t, Action::LeaveGateway { gateway: g.clone() }));
    }
    changes.push((170_000, kill.clone(), false));
    events.push(at(170_000, Action::KillGateway { gateway: kill }));
    changes.sort();

    let home: BTreeMap<&str, &str> = devices.iter().map(|d| (d.name.as_str(), d.gateway.as_str())).collect();
    let registered_at: BTreeMap<String, u64> = events
        .iter()
        .filter_map(|e| match &e.action {
            Action::Register { device } => Some((device.clone(), e.at_ms)),
            _ => None,
        })
        .collect();
    let late: BTreeSet<&str> = gws[8..].iter().map(|g| g.address.as_str()).collect();
    let alive_at = |t: u64, gw: &str| {
        let mut up = !late.contains(gw);
        for (ct, g, u) in &changes {
            if *ct <= t && g == gw {
                up = *u;
            }
        }
        up
    };

    for i in 0..100u64 {
        let now = 20_000 + 2_900 * i;
        let live: Vec<&GatewayConfig> = gws.iter().filter(|g| alive_at(now, &g.address)).collect();
        let concepts: Vec<String> = devices
            .iter()
            .filter(|d| registered_at[&d.name] + 2000 <= now && alive_at(now, home[d.name.as_str()]))
            .flat_map(concepts_of)
            .collect();
        let concept = concepts.choose(&mut rng).expect("concepts").clone();
        let gw = live.choose(&mut rng).expect("live gateway").address.clone();
        events.push(at(now, query(&mut rng, &gw, &concept)));
    }
    let end = 20_000 + 2_900 * 100;
    events.push(at(end, Action::Audit { republish: true }));
    events.sort_by_key(|e| e.at_ms);

    Scenario {
        name: "churn".into(),
        links: Default::default(),
        maintenance: Default::default(),
        gateways: gws,
        cloud: None,
        devices,
        timeline: events,
        settle_ms: 5000,
        expect: Expectations {
            min_stabilized_success_rate: Some(0.95),
            hop_bounds: true,
            final_ring_audit: true,
            ..Default::default()
        },
    }
}

/// One of the [`BUNDLED`] scenarios; `seed` is ignored by `smoke`.
pub fn bundled(name: &str, seed: u64) -> Option<Scenario> {
    match name {
        "smoke" => Some(smoke()),
        "e2e" => Some(e2e(seed)),
        "churn" => Some(churn(seed)),
        _ => None,
    }
}
