//! Regenerates the bundled recipe corpus `data/recipes.jsonl`.
//!
//!     cargo run -p xal-core --example gen_corpus -- [count] [seed]
//!
//! Recipes are drawn from category and cuisine mixtures over the ingredient
//! groups in `data/taxonomy.toml` plus a tail of ungrouped ingredients, with
//! nutrition values that loosely follow the ingredients.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use xal_core::synthuser::GroupTaxonomy;

const DISHES: usize = 80;

const UNGROUPED: &[&str] = &[
    "salt", "garlic", "water", "scallion", "shallot", "corn", "pumpkin", "butternut squash", "beet", "fennel",
    "artichoke", "okra", "turnip", "parsnip", "bean sprouts", "bamboo shoots", "water chestnuts", "seaweed",
    "nori", "kimchi", "sauerkraut", "pickles", "olives", "capers", "saffron", "lemongrass", "galangal",
    "kaffir lime leaves", "curry paste", "curry powder", "harissa", "sumac", "za'atar", "pomegranate", "figs",
    "apricot", "cranberry", "plum", "kiwi", "watermelon", "cantaloupe", "passion fruit", "garlic powder",
    "onion powder", "vegetable stock", "beef stock", "coconut milk", "almond milk", "oat milk", "matcha",
    "coffee", "tea", "marshmallow", "caramel", "jam", "peanut oil", "truffle oil", "anchovy paste",
    "smoked paprika", "fenugreek", "mustard seeds", "poppy seeds", "chia seeds", "flaxseed", "hazelnut",
    "macadamia", "brazil nut", "pumpkin seeds", "wild rice", "millet", "buckwheat", "rye flour",
    "whole wheat flour", "semolina", "panko", "croutons", "crackers", "puff pastry", "pie crust",
    "graham crackers", "wonton wrappers", "rice paper", "tempeh", "seitan", "halloumi", "paneer", "mascarpone",
    "creme fraiche", "evaporated milk", "suet", "venison", "rabbit", "goose", "octopus", "lobster",
    "oysters", "sardines", "trout", "mackerel", "horseradish", "wasabi", "pickled ginger", "liquid smoke",
];

const CUISINES: &[(&str, &[&str])] = &[
    ("italian", &["basil", "oregano", "parmesan", "mozzarella", "olive oil", "spaghetti", "penne", "tomato", "ricotta", "balsamic vinegar", "prosciutto", "pine nuts", "lasagna sheets", "mascarpone"]),
    ("mexican", &["tortilla", "black beans", "cilantro", "lime", "jalapeno", "cumin", "chili powder", "avocado", "chipotle", "corn", "pinto beans", "chorizo"]),
    ("indian", &["turmeric", "garam masala", "cumin", "coriander", "ginger", "lentils", "chickpeas", "ghee", "cardamom", "yogurt", "paneer", "curry powder", "fenugreek", "mustard seeds"]),
    ("chinese", &["soy sauce", "ginger", "sesame oil", "hoisin sauce", "oyster sauce", "rice", "scallion", "rice noodles", "star anise", "tofu", "bean sprouts", "bamboo shoots"]),
    ("japanese", &["soy sauce", "miso", "mirin", "sake", "nori", "rice", "salmon", "tofu", "wasabi", "pickled ginger", "seaweed", "edamame"]),
    ("thai", &["fish sauce", "coconut milk", "lemongrass", "lime", "cilantro", "rice noodles", "peanut", "curry paste", "galangal", "kaffir lime leaves", "sriracha"]),
    ("french", &["butter", "heavy cream", "thyme", "white wine", "gruyere", "shallot", "tarragon", "brandy", "creme fraiche", "egg yolk", "mustard"]),
    ("american", &["ground beef", "cheddar", "bacon", "ketchup", "brown sugar", "bread", "potato", "maple syrup", "peanut butter", "marshmallow", "graham crackers"]),
    ("mediterranean", &["olive oil", "feta", "lemon", "oregano", "chickpeas", "cucumber", "olives", "pita", "eggplant", "mint", "capers", "halloumi"]),
    ("middle_eastern", &["tahini", "sumac", "za'atar", "pomegranate", "bulgur", "lamb", "mint", "dates", "pistachio", "harissa", "couscous", "figs"]),
];

struct Category {
    name: &'static str,
    noun: &'static str,
    groups: &'static [(&'static str, f64)],
    calories: f64,
    sugar: f64,
    minutes: f64,
    staples: &'static [(&'static str, f64)],
}

const CATEGORIES: &[Category] = &[
    Category {
        name: "main",
        noun: "plate",
        groups: &[("meaty", 3.0), ("poultry", 3.0), ("seafood", 2.0), ("vegetable", 3.0), ("tomato", 2.0), ("spice", 2.0), ("herb", 2.0), ("oil_fat", 2.0), ("sauce", 1.5), ("grain", 1.5), ("pasta_bread", 1.5), ("legume", 1.0), ("chili", 1.0), ("alcohol", 0.5), ("cheese", 1.0), ("milky", 1.0), ("mushroom", 1.0)],
        calories: 550.0,
        sugar: 6.0,
        minutes: 45.0,
        staples: &[("salt", 0.6), ("black pepper", 0.4), ("garlic", 0.4), ("onion", 0.35), ("olive oil", 0.3)],
    },
    Category {
        name: "dessert",
        noun: "treat",
        groups: &[("sweetener", 4.0), ("baking", 4.0), ("milky", 3.0), ("eggy", 2.0), ("fruit", 3.0), ("nut_seed", 2.0), ("citrus", 1.0), ("alcohol", 0.3), ("spice", 0.7)],
        calories: 420.0,
        sugar: 35.0,
        minutes: 50.0,
        staples: &[("sugar", 0.6), ("butter", 0.45), ("flour", 0.45), ("egg", 0.4), ("vanilla extract", 0.3), ("salt", 0.2)],
    },
    Category {
        name: "soup",
        noun: "soup",
        groups: &[("vegetable", 4.0), ("legume", 2.0), ("poultry", 1.5), ("meaty", 1.0), ("herb", 2.0), ("spice", 2.0), ("tomato", 1.5), ("grain", 1.0), ("milky", 1.0), ("seafood", 0.7), ("chili", 0.7)],
        calories: 300.0,
        sugar: 5.0,
        minutes: 60.0,
        staples: &[("salt", 0.6), ("onion", 0.45), ("garlic", 0.4), ("water", 0.4), ("black pepper", 0.35), ("bay leaf", 0.2)],
    },
    Category {
        name: "salad",
        noun: "salad",
        groups: &[("vegetable", 4.0), ("fruit", 1.5), ("citrus", 2.0), ("cheese", 1.5), ("nut_seed", 1.5), ("herb", 2.0), ("oil_fat", 2.0), ("sauce", 1.5), ("legume", 1.0), ("seafood", 0.5), ("tomato", 1.5), ("grain", 0.7)],
        calories: 250.0,
        sugar: 7.0,
        minutes: 15.0,
        staples: &[("olive oil", 0.5), ("salt", 0.4), ("black pepper", 0.35), ("lemon", 0.3), ("vinegar", 0.25)],
    },
    Category {
        name: "breakfast",
        noun: "breakfast",
        groups: &[("eggy", 3.0), ("milky", 3.0), ("grain", 2.0), ("fruit", 2.0), ("sweetener", 2.0), ("pasta_bread", 2.0), ("meaty", 1.0), ("baking", 1.0), ("cheese", 1.0), ("nut_seed", 0.7)],
        calories: 380.0,
        sugar: 15.0,
        minutes: 20.0,
        staples: &[("egg", 0.45), ("milk", 0.4), ("butter", 0.35), ("salt", 0.3), ("sugar", 0.25)],
    },
    Category {
        name: "side",
        noun: "side",
        groups: &[("vegetable", 3.0), ("grain", 3.0), ("legume", 1.5), ("oil_fat", 2.0), ("herb", 2.0), ("spice", 1.5), ("milky", 1.0), ("cheese", 1.0), ("pasta_bread", 1.0), ("mushroom", 1.0)],
        calories: 220.0,
        sugar: 4.0,
        minutes: 30.0,
        staples: &[("salt", 0.55), ("olive oil", 0.35), ("butter", 0.3), ("garlic", 0.3), ("black pepper", 0.3)],
    },
    Category {
        name: "snack",
        noun: "bites",
        groups: &[("nut_seed", 3.0), ("fruit", 2.0), ("sweetener", 2.0), ("chili", 1.0), ("pasta_bread", 2.0), ("cheese", 1.5), ("spice", 1.0), ("legume", 1.0), ("sauce", 0.7)],
        calories: 200.0,
        sugar: 12.0,
        minutes: 15.0,
        staples: &[("salt", 0.4), ("sugar", 0.25), ("vegetable oil", 0.25)],
    },
    Category {
        name: "drink",
        noun: "cooler",
        groups: &[("fruit", 4.0), ("citrus", 3.0), ("alcohol", 2.0), ("sweetener", 2.0), ("milky", 1.5), ("herb", 1.0), ("spice", 0.5)],
        calories: 160.0,
        sugar: 25.0,
        minutes: 5.0,
        staples: &[("sugar", 0.35), ("water", 0.35), ("lime", 0.2), ("mint", 0.15)],
    },
];

fn lognormal(rng: &mut ChaCha8Rng, median: f64, sigma: f64) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    median * (sigma * z).exp()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let count: usize = args.get(1).map(|s| s.parse().expect("count")).unwrap_or(2000);
    let seed: u64 = args.get(2).map(|s| s.parse().expect("seed")).unwrap_or(20240101);
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/data");
    let taxonomy = GroupTaxonomy::load(format!("{dir}/taxonomy.toml")).expect("taxonomy");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Within-group popularity falls off with list position.
    let zipf = |n: usize| -> Vec<f64> { (0..n).map(|r| 1.0 / (r as f64 + 1.0).powf(0.8)).collect() };
    let ungrouped_weights: Vec<f64> = UNGROUPED
        .iter()
        .enumerate()
        .map(|(r, _)| if r < 3 { 6.0 } else { 1.0 / (r as f64).powf(0.3) })
        .collect();

    let draw_one = |rng: &mut ChaCha8Rng, cat: &Category, favourites: &[&str]| -> String {
        let groups: Vec<(&str, f64)> = cat
            .groups
            .iter()
            .filter(|(g, _)| taxonomy.groups.contains_key(*g))
            .copied()
            .collect();
        let group_pick = WeightedIndex::new(groups.iter().map(|g| g.1)).expect("weights");
        let r: f64 = rng.gen();
        if r < 0.15 {
            let w = WeightedIndex::new(&ungrouped_weights).expect("weights");
            UNGROUPED[w.sample(rng)].to_string()
        } else if r < 0.40 {
            favourites[rng.gen_range(0..favourites.len())].to_string()
        } else {
            let g = groups[group_pick.sample(rng)].0;
            let members = &taxonomy.groups[g];
            let w = WeightedIndex::new(zipf(members.len())).expect("weights");
            members[w.sample(rng)].clone()
        }
    };

    // Dishes: a category, a cuisine and a core ingredient list that each
    // recipe of the dish mostly keeps.
    let mut dishes = Vec::with_capacity(DISHES);
    for _ in 0..DISHES {
        let cat = &CATEGORIES[rng.gen_range(0..CATEGORIES.len())];
        let (cuisine, favourites) = CUISINES[rng.gen_range(0..CUISINES.len())];
        let size = rng.gen_range(5..=8);
        let mut core: Vec<String> = Vec::new();
        while core.len() < size {
            let pick = draw_one(&mut rng, cat, favourites);
            if !core.contains(&pick) {
                core.push(pick);
            }
        }
        dishes.push((cat, cuisine, favourites, core));
    }

    let mut out = String::new();
    for n in 0..count {
        let (cat, cuisine, favourites, core) = &dishes[rng.gen_range(0..dishes.len())];
        let mut chosen: Vec<String> = core.iter().filter(|_| rng.gen_bool(0.7)).cloned().collect();
        for c in core {
            if chosen.len() >= 3 {
                break;
            }
            if !chosen.contains(c) {
                chosen.push(c.clone());
            }
        }
        let mut seen: BTreeSet<String> = chosen.iter().cloned().collect();
        for _ in 0..rng.gen_range(1..=3) {
            let pick = draw_one(&mut rng, cat, favourites);
            if seen.insert(pick.clone()) {
                chosen.push(pick);
            }
        }
        for &(staple, p) in cat.staples {
            if rng.gen_bool(p) && seen.insert(staple.to_string()) {
                chosen.push(staple.to_string());
            }
        }
        let cat = *cat;
        let cuisine = *cuisine;

        let has = |g: &str| {
            taxonomy.groups.get(g).map_or(0, |m| chosen.iter().filter(|c| m.contains(c)).count()) as f64
        };
        let protein_hits = has("meaty") + has("poultry") + has("seafood") + has("legume") + has("eggy") + has("cheese");
        let fat_hits = has("oil_fat") + has("milky") + has("cheese") + has("meaty") + has("nut_seed");
        let salt_hits = has("sauce") + has("cheese") + has("meaty") + chosen.iter().any(|c| c == "salt") as usize as f64;
        let calories = lognormal(&mut rng, cat.calories * (1.0 + 0.06 * chosen.len() as f64), 0.35);
        let fat = lognormal(&mut rng, 6.0 + 5.0 * fat_hits, 0.4);
        let sugar = lognormal(&mut rng, cat.sugar * (1.0 + 0.5 * has("sweetener") + 0.3 * has("fruit")), 0.5);
        let protein = lognormal(&mut rng, 4.0 + 9.0 * protein_hits, 0.4);
        let sodium = lognormal(&mut rng, 150.0 + 220.0 * salt_hits, 0.5);
        let time = lognormal(&mut rng, cat.minutes * (0.7 + 0.05 * chosen.len() as f64), 0.4).round().max(1.0);

        let title = {
            let mut c = cuisine.replace('_', " ");
            c[..1].make_ascii_uppercase();
            format!("{c} {} {}", chosen[0], cat.noun)
        };
        let rec = json!({
            "id": format!("r{:04}", n + 1),
            "name": title,
            "cuisine": cuisine,
            "category": cat.name,
            "ingredient": chosen,
            "calories": (calories * 10.0).round() / 10.0,
            "fat": (fat * 10.0).round() / 10.0,
            "sugar": (sugar * 10.0).round() / 10.0,
            "protein": (protein * 10.0).round() / 10.0,
            "sodium": sodium.round().max(1.0),
            "time": time,
        });
        writeln!(out, "{rec}").unwrap();
    }
    std::fs::write(format!("{dir}/recipes.jsonl"), out).expect("write corpus");
    eprintln!("wrote {count} recipes to {dir}/recipes.jsonl");
}
