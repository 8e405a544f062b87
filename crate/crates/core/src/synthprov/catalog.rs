use serde::{Deserialize, Serialize};

/// A synthetic claim entity: its knowledge-graph identity, the representative
/// word a curator would search for, and the content words its fact-check
/// descriptions are built from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpec {
    pub entity_id: String,
    pub display_name: String,
    pub word: String,
    pub core: Vec<String>,
}

const ENTITIES: &[(&str, &str, [&str; 3])] = &[
    ("/m/012mj", "alcoholic drink", ["alcohol", "drinking", "cures"]),
    ("/g/fcsim_coffee", "coffee", ["coffee", "drinking", "cures"]),
    ("/g/fcsim_5g", "5G", ["5g", "towers", "spread"]),
    ("/g/fcsim_gates", "Bill Gates", ["gates", "billionaire", "microchips"]),
    ("/g/fcsim_garlic", "garlic", ["garlic", "boiled", "remedy"]),
    ("/g/fcsim_hcq", "hydroxychloroquine", ["hydroxychloroquine", "tablets", "approved"]),
    ("/g/fcsim_ivermectin", "ivermectin", ["ivermectin", "dewormer", "prescribed"]),
    ("/g/fcsim_masks", "face mask", ["masks", "oxygen", "suffocation"]),
    ("/g/fcsim_bleach", "bleach", ["bleach", "injecting", "disinfectant"]),
    ("/g/fcsim_vitamin_c", "vitamin C", ["vitamin", "megadose", "immunity"]),
    ("/g/fcsim_lemon", "lemon", ["lemon", "juice", "alkaline"]),
    ("/g/fcsim_bats", "bat soup", ["bats", "soup", "market"]),
    ("/g/fcsim_bioweapon", "biological warfare", ["bioweapon", "laboratory", "engineered"]),
    ("/g/fcsim_vaccine", "COVID-19 vaccine", ["vaccine", "dna", "altering"]),
    ("/g/fcsim_cow_urine", "cow urine", ["cow", "urine", "ayurveda"]),
    ("/g/fcsim_breath", "breath holding test", ["breath", "holding", "seconds"]),
    ("/g/fcsim_heat", "heat", ["sunlight", "temperature", "heatwave"]),
    ("/g/fcsim_dryer", "hand dryer", ["dryer", "hands", "blowers"]),
    ("/g/fcsim_dogs", "dog", ["dogs", "pets", "transmit"]),
    ("/g/fcsim_mosquito", "mosquito", ["mosquitoes", "bites", "insects"]),
    ("/g/fcsim_ginger", "ginger", ["ginger", "root", "infusion"]),
    ("/g/fcsim_ibuprofen", "ibuprofen", ["ibuprofen", "painkiller", "worsens"]),
    ("/g/fcsim_plandemic", "Plandemic", ["plandemic", "documentary", "mikovits"]),
    ("/g/fcsim_nostradamus", "Nostradamus", ["nostradamus", "prophecy", "predicted"]),
    ("/g/fcsim_spraying", "aerial spraying", ["helicopters", "spraying", "pesticide"]),
    ("/g/fcsim_cocaine", "cocaine", ["cocaine", "snorting", "kills"]),
    ("/g/fcsim_steam", "steam inhalation", ["steam", "inhalation", "nostrils"]),
    ("/g/fcsim_saline", "saline nasal rinse", ["saline", "rinsing", "nasal"]),
    ("/g/fcsim_organics", "Covid-Organics", ["madagascar", "artemisia", "tonic"]),
    ("/g/fcsim_onion", "onion", ["onions", "sliced", "absorb"]),
    ("/g/fcsim_parcels", "parcel", ["parcels", "packages", "shipped"]),
    ("/g/fcsim_pangolin", "pangolin", ["pangolin", "snakes", "reservoir"]),
    ("/g/fcsim_bath", "hot bath", ["bath", "hot", "soaking"]),
    ("/g/fcsim_silver", "colloidal silver", ["colloidal", "silver", "particles"]),
    ("/g/fcsim_turmeric", "turmeric", ["turmeric", "curcumin", "paste"]),
    ("/g/fcsim_pope", "Pope Francis", ["pope", "vatican", "infected"]),
    ("/g/fcsim_hanks", "Tom Hanks", ["hanks", "actor", "arrested"]),
    ("/g/fcsim_vinegar", "vinegar", ["vinegar", "apple", "cider"]),
    ("/g/fcsim_zinc", "zinc", ["zinc", "lozenges", "supplements"]),
];

/// The built-in catalog of 39 claim entities.
pub fn default_entities() -> Vec<EntitySpec> {
    ENTITIES
        .iter()
        .map(|(id, name, core)| EntitySpec {
            entity_id: id.to_string(),
            display_name: name.to_string(),
            word: core[0].to_string(),
            core: core.iter().map(|s| s.to_string()).collect(),
        })
        .collect()
}

/// 72 countries with fact-checking activity, used by default.
pub const DEFAULT_COUNTRIES: &[&str] = &[
    "AR", "AU", "BD", "BE", "BO", "BR", "CA", "CL", "CN", "CO", "CR", "CZ", "DE", "DO", "DZ", "EC", "EG", "ES",
    "ET", "FI", "FR", "GB", "GH", "GR", "GT", "HK", "HN", "HR", "HU", "ID", "IE", "IL", "IN", "IQ", "IT", "JO",
    "JP", "KE", "LB", "LK", "MA", "MM", "MX", "MY", "NG", "NI", "NL", "NO", "NP", "NZ", "PA", "PE", "PH", "PK",
    "PL", "PT", "PY", "RO", "RS", "RU", "SA", "SE", "SG", "SV", "TH", "TN", "TR", "TW", "UA", "US", "UY", "ZA",
];

/// Countries whose anchor banks cannot be built in the default world.
pub const DEFAULT_NOISY_COUNTRIES: &[&str] = &["MW", "KR", "TL", "KG"];
