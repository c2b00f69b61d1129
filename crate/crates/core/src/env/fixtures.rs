//! Canned reference apps for desk-scale runs, tests, and benchmarks.

use std::collections::BTreeMap;

use super::sim::{BBox, SimAppSpec, Transition, Widget};
use super::WidgetKind;

fn goto(target: &str) -> Transition {
    Transition::Goto { target: target.to_string() }
}

fn mutate(var: &str, delta: i64) -> Transition {
    Transition::Mutate { var: var.to_string(), delta }
}

fn widget(id: &str, bbox: BBox, kind: WidgetKind, transition: Transition) -> Widget {
    Widget { id: id.to_string(), bbox, kind, transition }
}

/// Three-screen IDE-flavored app: home with navigation and a command-palette
/// hotkey, an editor pane with a typing field, and a settings pane.
pub fn editor_app() -> SimAppSpec {
    let mut widgets = BTreeMap::new();
    widgets.insert(
        "home".to_string(),
        vec![
            widget("open_editor", BBox::new(24, 12, 44, 24), WidgetKind::Button, goto("editor")),
            widget("open_settings", BBox::new(24, 30, 44, 42), WidgetKind::Button, goto("settings")),
            widget("ctrl+p", BBox::new(0, 0, 0, 0), WidgetKind::Hotkey, mutate("palette", 1)),
        ],
    );
    widgets.insert(
        "editor".to_string(),
        vec![
            widget("code_box", BBox::new(8, 8, 56, 40), WidgetKind::Field, mutate("code_clicks", 1)),
            widget("back_home", BBox::new(8, 48, 24, 56), WidgetKind::Button, goto("home")),
        ],
    );
    widgets.insert(
        "settings".to_string(),
        vec![
            widget("toggle_wrap", BBox::new(8, 8, 24, 16), WidgetKind::Toggle, mutate("wrap", 1)),
            widget("scroll_pane", BBox::new(8, 20, 56, 44), WidgetKind::Scrollable, mutate("scroll", 1)),
            widget("back_settings", BBox::new(8, 48, 24, 56), WidgetKind::Button, goto("home")),
        ],
    );
    SimAppSpec {
        screens: vec!["home".into(), "editor".into(), "settings".into()],
        widgets,
        initial_screen: "home".into(),
    }
}

/// Hub-and-panels app with size-skewed hub buttons: button areas shrink with
/// index so area-biased policies concentrate on the first few. Each panel has
/// `panel_widgets` local mutate buttons plus a back link.
pub fn hub_app(panels: usize, panel_widgets: usize, width: u32, height: u32) -> SimAppSpec {
    assert!(panels <= 25, "hub layout holds at most 25 panels");
    assert!(panel_widgets <= 20, "panel layout holds at most 20 widgets");
    assert!(width >= 64 && height >= 64, "hub app is laid out for >= 64x64");

    let mut screens = vec!["hub".to_string()];
    let mut widgets = BTreeMap::new();

    let mut hub = Vec::new();
    for i in 0..panels {
        let col = (i % 5) as u32;
        let row = (i / 5) as u32;
        let w = 10u32.saturating_sub(i as u32 / 2).max(3);
        let h = 8u32.saturating_sub(i as u32 / 3).max(3);
        let x0 = 1 + col * 12;
        let y0 = 4 + row * 11;
        let name = format!("panel_{i}");
        hub.push(widget(
            &format!("open_{name}"),
            BBox::new(x0, y0, x0 + w, y0 + h),
            WidgetKind::Button,
            goto(&name),
        ));
        screens.push(name);
    }
    widgets.insert("hub".to_string(), hub);

    for i in 0..panels {
        let name = format!("panel_{i}");
        let mut local = vec![widget(
            &format!("back_{i}"),
            BBox::new(1, 56, 9, 62),
            WidgetKind::Button,
            goto("hub"),
        )];
        for j in 0..panel_widgets {
            let col = (j % 5) as u32;
            let row = (j / 5) as u32;
            let w = 9u32.saturating_sub(j as u32 / 2).max(3);
            let h = 7u32.saturating_sub(j as u32 / 3).max(3);
            let x0 = 1 + col * 12;
            let y0 = 4 + row * 11;
            local.push(widget(
                &format!("act_{i}_{j}"),
                BBox::new(x0, y0, x0 + w, y0 + h),
                WidgetKind::Button,
                mutate(&format!("state_{i}_{j}"), 1),
            ));
        }
        widgets.insert(name, local);
    }

    SimAppSpec { screens, widgets, initial_screen: "hub".into() }
}

/// Linear corridor: stage_0 .. stage_len, each stage holding one forward
/// button; the final stage has no widgets.
pub fn chain_app(len: usize, _width: u32, _height: u32) -> SimAppSpec {
    let mut screens = Vec::new();
    let mut widgets = BTreeMap::new();
    for i in 0..=len {
        screens.push(format!("stage_{i}"));
    }
    for i in 0..len {
        widgets.insert(
            format!("stage_{i}"),
            vec![widget(
                &format!("next_{i}"),
                BBox::new(20, 20, 40, 32),
                WidgetKind::Button,
                goto(&format!("stage_{}", i + 1)),
            )],
        );
    }
    widgets.insert(format!("stage_{len}"), Vec::new());
    SimAppSpec { screens, widgets, initial_screen: "stage_0".into() }
}

/// A trap screen whose widgets all transition to the screen itself, so every
/// click renders an unchanged frame.
pub fn dead_region_app() -> SimAppSpec {
    let mut widgets = BTreeMap::new();
    widgets.insert(
        "trap".to_string(),
        vec![
            widget("stuck_left", BBox::new(4, 10, 20, 22), WidgetKind::Button, goto("trap")),
            widget("stuck_right", BBox::new(30, 10, 46, 22), WidgetKind::Button, goto("trap")),
        ],
    );
    SimAppSpec { screens: vec!["trap".into()], widgets, initial_screen: "trap".into() }
}

/// Three screens where screen `a` can reach both `b` and `c`; handy for
/// constructing mismatched-expectation cases.
pub fn two_panel_app() -> SimAppSpec {
    let mut widgets = BTreeMap::new();
    widgets.insert(
        "a".to_string(),
        vec![
            widget("to_b", BBox::new(4, 10, 20, 22), WidgetKind::Button, goto("b")),
            widget("to_c", BBox::new(30, 10, 46, 22), WidgetKind::Button, goto("c")),
        ],
    );
    widgets.insert(
        "b".to_string(),
        vec![widget("b_back", BBox::new(4, 40, 20, 52), WidgetKind::Button, goto("a"))],
    );
    widgets.insert(
        "c".to_string(),
        vec![widget("c_back", BBox::new(4, 40, 20, 52), WidgetKind::Button, goto("a"))],
    );
    SimAppSpec {
        screens: vec!["a".into(), "b".into(), "c".into()],
        widgets,
        initial_screen: "a".into(),
    }
}
