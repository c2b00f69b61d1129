//! Deterministic simulated GUI: screens, hit-boxed widgets, and a transition
//! table, rendered to small grayscale/RGB frames.

use std::collections::BTreeMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{fnv1a64, Action, ActionKind, Observation};

use super::{EnvError, Environment, EnvironmentConfig};

/// Screen identity byte rendered at the origin pixel. Injective for up to 256
/// screens (13 is coprime to 256).
pub fn screen_tag(screen_index: usize) -> u8 {
    (17u8).wrapping_add((13u8).wrapping_mul(screen_index as u8))
}

/// Half-open pixel box [x0, x1) x [y0, y1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        BBox { x0, y0, x1, y1 }
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn center(&self) -> (u32, u32) {
        ((self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2)
    }

    pub fn area(&self) -> u64 {
        u64::from(self.x1.saturating_sub(self.x0)) * u64::from(self.y1.saturating_sub(self.y0))
    }

    fn overlaps(&self, other: &BBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidgetKind {
    Button,
    Link,
    Toggle,
    Field,
    /// Triggered by a KEY action whose text equals the widget id; the box may
    /// be empty since hotkeys are not hit-tested.
    Hotkey,
    Scrollable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    Goto { target: String },
    Mutate { var: String, delta: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Widget {
    pub id: String,
    pub bbox: BBox,
    pub kind: WidgetKind,
    pub transition: Transition,
}

/// Declarative stand-in for a real application: screens, per-screen widgets,
/// and the screen the app opens on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimAppSpec {
    pub screens: Vec<String>,
    pub widgets: BTreeMap<String, Vec<Widget>>,
    pub initial_screen: String,
}

impl SimAppSpec {
    /// Structural checks plus render-bound checks: every referenced screen
    /// exists, widget boxes lie within the render bounds, and hit-testable
    /// boxes on one screen are disjoint.
    pub fn validate(&self, width: u32, height: u32) -> Vec<String> {
        let mut problems = Vec::new();
        if !self.screens.contains(&self.initial_screen) {
            problems.push(format!("initial_screen '{}' is not a declared screen", self.initial_screen));
        }
        for (screen, widgets) in &self.widgets {
            if !self.screens.contains(screen) {
                problems.push(format!("widgets declared for unknown screen '{screen}'"));
            }
            for w in widgets {
                if w.bbox.x0 > w.bbox.x1 || w.bbox.y0 > w.bbox.y1 {
                    problems.push(format!("widget '{}' has an inverted box", w.id));
                }
                if w.bbox.x1 > width || w.bbox.y1 > height {
                    problems.push(format!(
                        "widget '{}' box exceeds the {width}x{height} render bounds",
                        w.id
                    ));
                }
                if let Transition::Goto { target } = &w.transition {
                    if !self.screens.contains(target) {
                        problems.push(format!(
                            "widget '{}' transitions to unknown screen '{target}'",
                            w.id
                        ));
                    }
                }
            }
            for (i, a) in widgets.iter().enumerate() {
                for b in widgets.iter().skip(i + 1) {
                    if a.bbox.area() > 0 && b.bbox.area() > 0 && a.bbox.overlaps(&b.bbox) {
                        problems.push(format!(
                            "widgets '{}' and '{}' overlap on screen '{screen}'",
                            a.id, b.id
                        ));
                    }
                }
            }
        }
        problems
    }

    pub fn screen_index(&self, id: &str) -> Option<usize> {
        self.screens.iter().position(|s| s == id)
    }

    pub fn widgets_of(&self, screen: &str) -> &[Widget] {
        self.widgets.get(screen).map_or(&[], Vec::as_slice)
    }
}

/// Deterministic simulated environment hosting one app for one category.
pub struct SimEnvironment {
    category: String,
    spec: SimAppSpec,
    config: Option<EnvironmentConfig>,
    screen: usize,
    vars: BTreeMap<String, i64>,
    noise_draws: u64,
}

impl SimEnvironment {
    pub fn new(category: impl Into<String>, spec: SimAppSpec) -> Self {
        SimEnvironment {
            category: category.into(),
            spec,
            config: None,
            screen: 0,
            vars: BTreeMap::new(),
            noise_draws: 0,
        }
    }

    pub fn spec(&self) -> &SimAppSpec {
        &self.spec
    }

    pub fn current_screen(&self) -> &str {
        &self.spec.screens[self.screen]
    }

    fn config(&self) -> Result<&EnvironmentConfig, EnvError> {
        self.config.as_ref().ok_or(EnvError::NotReset)
    }

    /// Clean canonical render of the current state.
    pub fn render(&self) -> Result<Observation, EnvError> {
        let config = self.config()?;
        let (w, h, c) =
            (config.render.width, config.render.height, config.render.channels);
        let tag = screen_tag(self.screen);
        let seed_bytes = config.seed.to_le_bytes();
        let cat_bytes = fnv1a64(config.category.as_bytes()).to_le_bytes();

        let mut base = vec![0u8; (w * h) as usize];
        for y in 0..h {
            for x in 0..w {
                base[(y * w + x) as usize] =
                    ((x * 7 + y * 13) as u8).wrapping_add(tag.wrapping_mul(31));
            }
        }
        // Row 0: screen tag, then seed and category decorations.
        base[0] = tag;
        for (i, &b) in seed_bytes.iter().enumerate() {
            let x = 1 + i as u32;
            if x < w {
                base[x as usize] = b;
            }
        }
        for (i, &b) in cat_bytes.iter().enumerate() {
            let x = 9 + i as u32;
            if x < w {
                base[x as usize] = b;
            }
        }
        // Widgets: filled boxes with id-derived intensity.
        for widget in self.spec.widgets_of(self.current_screen()) {
            let shade = 64u8.wrapping_add((fnv1a64(widget.id.as_bytes()) % 160) as u8);
            for y in widget.bbox.y0..widget.bbox.y1.min(h) {
                for x in widget.bbox.x0..widget.bbox.x1.min(w) {
                    if y == 0 && x < 17 {
                        continue; // keep the decoration row intact
                    }
                    base[(y * w + x) as usize] = shade;
                }
            }
        }
        // State variables accumulate into the bottom row.
        if h >= 2 {
            for (name, value) in &self.vars {
                let span = w.saturating_sub(4).max(1);
                let x_off = (fnv1a64(name.as_bytes()) % u64::from(span)) as u32;
                for (i, &b) in value.to_le_bytes().iter().take(4).enumerate() {
                    let x = x_off + i as u32;
                    if x < w {
                        let idx = ((h - 1) * w + x) as usize;
                        base[idx] = base[idx].wrapping_add(b);
                    }
                }
            }
        }

        let pixels = if c == 1 {
            base
        } else {
            let mut out = Vec::with_capacity(base.len() * c as usize);
            for &v in &base {
                for ch in 0..c {
                    out.push(v.wrapping_add(ch * 85));
                }
            }
            out
        };
        Ok(Observation::new(w, h, c, pixels).expect("render buffer sized to spec"))
    }

    fn hit_widget(&self, x: u32, y: u32) -> Option<&Widget> {
        self.spec
            .widgets_of(self.current_screen())
            .iter()
            .find(|w| w.kind != WidgetKind::Hotkey && w.bbox.contains(x, y))
    }

    fn apply_transition(&mut self, transition: &Transition) {
        match transition {
            Transition::Goto { target } => {
                if let Some(idx) = self.spec.screen_index(target) {
                    self.screen = idx;
                }
            }
            Transition::Mutate { var, delta } => {
                *self.vars.entry(var.clone()).or_insert(0) += delta;
            }
        }
    }
}

impl Environment for SimEnvironment {
    fn reset(&mut self, config: &EnvironmentConfig) -> Result<Observation, EnvError> {
        config.validate()?;
        if config.category != self.category {
            return Err(EnvError::UnknownCategory {
                got: config.category.clone(),
                expected: self.category.clone(),
            });
        }
        let problems = self.spec.validate(config.render.width, config.render.height);
        if !problems.is_empty() {
            return Err(EnvError::Spec(problems.join("; ")));
        }

        self.screen = self
            .spec
            .screen_index(&self.spec.initial_screen)
            .expect("validated initial screen");
        self.vars.clear();
        for asset in &config.asset_manifest {
            if asset.payload.trim().is_empty() {
                return Err(EnvError::Asset(format!(
                    "asset '{}' has an empty payload reference",
                    asset.name
                )));
            }
            let value = (fnv1a64(asset.payload.as_bytes()) % 9973) as i64 + 1;
            self.vars.insert(format!("asset_{}", asset.name), value);
        }
        self.config = Some(config.clone());
        self.noise_draws = 0;
        self.render()
    }

    fn step(&mut self, action: &Action) -> Result<Observation, EnvError> {
        self.config()?;
        action.validate()?;
        match action.kind {
            ActionKind::Terminate => return Err(EnvError::EngineLevelAction),
            ActionKind::Wait => {}
            ActionKind::Click | ActionKind::DoubleClick => {
                let (x, y) = action.coordinate.expect("validated");
                if let Some(widget) = self.hit_widget(x, y) {
                    let transition = widget.transition.clone();
                    self.apply_transition(&transition);
                }
            }
            ActionKind::Scroll => {
                let (x, y) = action.coordinate.expect("validated");
                let hit = self
                    .spec
                    .widgets_of(self.current_screen())
                    .iter()
                    .find(|w| w.kind == WidgetKind::Scrollable && w.bbox.contains(x, y))
                    .cloned();
                if let Some(widget) = hit {
                    if let Transition::Mutate { .. } = widget.transition {
                        self.apply_transition(&widget.transition);
                    }
                }
            }
            ActionKind::Key => {
                let chord = action.text.as_deref().expect("validated");
                let hit = self
                    .spec
                    .widgets_of(self.current_screen())
                    .iter()
                    .find(|w| w.kind == WidgetKind::Hotkey && w.id == chord)
                    .cloned();
                if let Some(widget) = hit {
                    self.apply_transition(&widget.transition);
                }
            }
            ActionKind::TypeText => {
                let text = action.text.as_deref().expect("validated");
                let field = self
                    .spec
                    .widgets_of(self.current_screen())
                    .iter()
                    .find(|w| w.kind == WidgetKind::Field)
                    .map(|w| w.id.clone());
                if let Some(field_id) = field {
                    let value = (fnv1a64(text.as_bytes()) % 199) as i64 + 1;
                    self.vars.insert(format!("typed_{field_id}"), value);
                }
            }
        }
        self.render()
    }

    fn render_noisy(&mut self, step_index: u64) -> Result<Observation, EnvError> {
        let clean = self.render()?;
        let config = self.config()?.clone();
        let amplitude = config.noise_amplitude;
        if amplitude <= 0.0 {
            return Ok(clean);
        }

        // Per-pixel perturbation of magnitude floor(a) or ceil(a), mixed so
        // the expected squared magnitude equals a^2; signs are chosen away
        // from the 0/255 boundaries so no clamping distorts the RMS.
        let lo = amplitude.floor();
        let hi = lo + 1.0;
        let p_hi = if amplitude > lo { (amplitude * amplitude - lo * lo) / (hi * hi - lo * lo) } else { 0.0 };

        let draw = self.noise_draws;
        self.noise_draws += 1;
        let mut seed_buf = Vec::with_capacity(24);
        seed_buf.extend_from_slice(&config.seed.to_le_bytes());
        seed_buf.extend_from_slice(&step_index.to_le_bytes());
        seed_buf.extend_from_slice(&draw.to_le_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(&seed_buf));

        let mut pixels = clean.pixels.clone();
        for px in &mut pixels {
            let mag = if rng.random_bool(p_hi) { hi } else { lo } as i16;
            if mag == 0 {
                continue;
            }
            let v = i16::from(*px);
            let delta = if v < mag {
                mag
            } else if v > 255 - mag {
                -mag
            } else if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            };
            *px = (v + delta) as u8;
        }
        Ok(Observation::new(clean.width, clean.height, clean.channels, pixels)
            .expect("noise preserves the buffer shape"))
    }
}
