#include "expanse/assets/builtin.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <sstream>

namespace expanse {
namespace {

struct CategoryWords {
  std::string_view category;
  std::vector<std::string> words;
};

const std::vector<CategoryWords>& lexicon() {
  static const std::vector<CategoryWords> data = {
      {"subjects",
       {"man", "woman", "boy", "girl", "child", "children", "person", "people", "artist",
        "apostle", "monk", "scholar", "sculptor", "painter", "worker", "doctor", "nurse", "chef",
        "teacher", "student", "soldier", "farmer", "dog", "cat", "horse", "bird", "robot", "hero",
        "superhero", "character", "tourist", "tourists", "visitors", "customer", "user", "users",
        "tenant", "tenants", "grandmother", "grandfather", "athlete", "musician", "dancer",
        "scientist", "engineer", "traveler", "knight", "wizard", "astronaut", "explorer",
        "barista", "patient", "prophet", "writer", "poet", "mechanic", "pilot", "gardener"}},
      {"attributes",
       {"young", "old", "elderly", "ancient", "modern", "bearded", "beard", "male", "female",
        "asian", "african", "european", "hispanic", "indian", "egyptian", "latina", "tall",
        "short", "smiling", "serious", "experienced", "wrinkled", "muscular", "slim", "blonde",
        "redhead", "caped", "masked", "armored", "colorful", "red", "blue", "green", "yellow",
        "purple", "golden", "silver", "bright", "dark", "vintage", "futuristic", "minimalist",
        "rustic", "cozy", "luxurious", "cartoon", "realistic", "elegant", "tattooed", "freckled",
        "curly", "gray", "teenage", "middle-aged", "disabled", "plump", "stylish", "scandinavian",
        "industrial", "bohemian", "pastel", "neon", "friendly", "fierce", "gentle", "playful"}},
      {"contextual_settings",
       {"city", "street", "park", "beach", "forest", "mountain", "mountains", "desert", "kitchen",
        "studio", "office", "library", "temple", "church", "market", "village", "garden", "river",
        "lake", "snow", "rain", "night", "sunset", "morning", "indoor", "outdoor", "cafe",
        "apartment", "bedroom", "castle", "space", "underwater", "countryside", "stage", "field",
        "restaurant", "jungle", "harbor", "rooftop", "subway", "island", "festival", "museum",
        "workshop", "classroom", "hospital", "stadium", "balcony", "loft", "cabin", "tropical",
        "arctic", "medieval", "downtown", "suburban", "dawn", "twilight", "storm"}},
      {"actions",
       {"writing", "reading", "painting", "chiseling", "composing", "sculpting", "drawing",
        "cooking", "running", "walking", "jumping", "flying", "dancing", "singing", "playing",
        "sitting", "standing", "working", "brewing", "drinking", "climbing", "swimming",
        "praying", "meditating", "considering", "thinking", "exploring", "hiking", "laughing",
        "talking", "eating", "sleeping", "riding", "carrying", "building", "teaching", "fighting",
        "saving", "operating", "pouring", "relaxing", "shopping", "photographing", "gardening",
        "skating", "surfing", "knitting", "typing"}},
      {"relationships",
       {"alone", "together", "family", "friends", "couple", "group", "crowd", "team", "mentor",
        "partner", "neighbors", "strangers", "colleagues", "siblings", "parents", "community",
        "classmates", "companions", "roommates", "sidekick", "rivals", "grandchildren"}},
  };
  return data;
}

const std::map<std::string, std::string_view, std::less<>>& word_to_category() {
  static const auto index = [] {
    std::map<std::string, std::string_view, std::less<>> m;
    for (const auto& entry : lexicon()) {
      for (const auto& w : entry.words) m.emplace(w, entry.category);
    }
    return m;
  }();
  return index;
}

const std::set<std::string, std::less<>>& stopwords() {
  static const std::set<std::string, std::less<>> words = {
      "a", "an", "the", "of", "in", "on", "at", "to", "with", "and", "is", "are", "for", "by",
      "from", "into", "through", "along", "near", "that", "this", "its", "it", "as", "be",
      "was", "were", "or", "while", "their", "his", "her", "some", "up", "down", "that's"};
  return words;
}

// General-purpose words so prompts and free-text revisions tokenize into
// whole words instead of character pieces.
constexpr std::string_view kGeneralWords = R"(
design advertisement image images showcasing showcase range operating coffee machine machines
promotional poster posters attract variety visitors tourist destination video game
superhero character relatable interior apartment appealing potential tenants campaign line
new product products marketing audience wider resonates create generate generated
travel specific engaging materials highlight broader array experiences fun visualize
furniture layout model one-bedroom rental placements setting everything different diverse
diversity ages age ethnicity ethnicities gender genders background backgrounds culture
cultures more less many few very quite much most least look looks looking style styles
scene scenes picture photo photograph portrait close-up closeup wide angle composition
framing perspective lighting light shadow shadows color colors tone mood warm cold calm
cheerful sad happy angry aggressive friendlier softer brighter darker unique traditional
normal typical classic contemporary simple detailed abstract photorealistic anime
watercolor sketch illustration render 3d cinematic natural soft strong big small large
tiny huge long tall round square blue shirt shirts dress hat glasses jacket coat boots
cape mask suit uniform apron scarf helmet armor guitar piano violin drum book books
newspaper notes manuscript bible pen pencil brush canvas chisel stone marble clay table
chair couch sofa bed lamp window door wall floor plant plants flowers tree trees grass
water sky sun moon clouds cloud road bridge building buildings house home houses tower
car bike bicycle bus train boat plane ladder bench counter cup mug food dinner breakfast
lunch meal bread fruit soccer ball photo camera phone computer laptop screen sign
picnic piece work works job task art artwork masterpiece painting sculpture statue
character characters hero heroes villain powers power cape costume shield sword
someone everyone anyone something nothing everything other others another each every
two three four five several group pair both all any no not only also just even still
again around across over under behind between inside outside beside above below before
after during without within toward towards against about like than then there here where
when what which who whom whose why how can could would should will may might must do does
did done doing have has had having get gets got make makes made take takes took taking
give gives go goes went going come comes came see sees saw seen show shows shown keep
use used uses find found hold holds holding wear wears wearing stand sits sit run runs
walk walks play plays read reads write writes paint paints cook cooks eat eats sleep
sleeps jump jumps dance dances sing sings talk talks smile smiles look patient patients
prepare preparing prepared talk note paper newspaper sleep sleeping taking photo
together alone people person men women kids kid baby babies teen teenager teens adult
adults senior seniors older younger youthful grandparent grandparents elder elders
latino multicultural race races nonbinary masculine feminine men boys girls
mood vibe atmosphere energy feel feeling feelings emotion emotions expression expressions
pose poses gesture outfit outfits clothing fashion hair hairstyle skin face faces eyes
smile smiles beard beards wrinkles tattoo tattoos glasses earring jewelry
considering experienced apostle prosperity meditating elderly bearded writing manuscript
user users customer customers visitor guests guest host hosts family families
friend friends couple couples team teams crowd crowds neighbor neighborhood
living room rooms space spaces area areas place places world country countries town towns
sea ocean shore coast wave waves hill hills valley rock rocks sand snow ice fire
sunrise sunset evening afternoon day days night nights summer winter spring autumn fall
rainy sunny cloudy foggy windy stormy
red orange yellow green blue purple pink brown black white gray grey gold silver
first second third last next previous final initial original expanded diverse
really please want wanted need needs like likes love loves prefer prefers preferred avoid
avoided include includes including exclude excluding add added remove removed change
changed replace replaced instead rather same similar less more
)";

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

}  // namespace

bool is_category(std::string_view name) {
  return std::find(kCategories.begin(), kCategories.end(), name) != kCategories.end();
}

const std::vector<std::string>& lexicon_words(std::string_view category) {
  for (const auto& entry : lexicon()) {
    if (entry.category == category) return entry.words;
  }
  static const std::vector<std::string> empty;
  return empty;
}

std::optional<std::string_view> lexicon_category(std::string_view word) {
  const auto& index = word_to_category();
  if (auto it = index.find(word); it != index.end()) return it->second;
  return std::nullopt;
}

const std::vector<Facet>& preference_facets() {
  static const std::vector<Facet> facets = {
      {"age", "attributes",
       {"age", "ages", "young", "old", "elderly", "older", "younger", "child", "children", "kid",
        "kids", "teen", "teens", "teenage", "teenager", "senior", "seniors", "adult", "adults",
        "baby", "babies", "aged", "middle-aged", "youthful", "grandparent", "grandparents",
        "grandmother", "grandfather", "elder", "elders"}},
      {"ethnicity", "attributes",
       {"ethnicity", "ethnicities", "asian", "african", "european", "hispanic", "latino",
        "latina", "indian", "egyptian", "scandinavian", "multicultural", "race", "races",
        "culture", "cultures"}},
      {"gender", "attributes",
       {"gender", "genders", "male", "female", "man", "men", "woman", "women", "boy", "boys",
        "girl", "girls", "nonbinary", "masculine", "feminine"}},
      {"setting", "contextual_settings",
       {"setting", "background", "backgrounds", "location", "place", "city", "street", "park",
        "beach", "forest", "mountain", "mountains", "desert", "kitchen", "studio", "office",
        "indoor", "outdoor", "apartment", "room", "cafe", "countryside", "village", "island",
        "jungle", "loft", "cabin", "downtown", "suburban"}},
      {"composition", "attributes",
       {"composition", "close-up", "closeup", "wide", "portrait", "framing", "angle", "layout",
        "perspective", "placement", "placements", "pose", "poses"}},
      {"tone", "attributes",
       {"tone", "mood", "vibe", "atmosphere", "friendly", "friendlier", "aggressive", "calm",
        "cheerful", "warm", "cozy", "gentle", "playful", "fierce", "softer", "lighting",
        "brighter", "darker", "rainy", "sunny"}},
      {"style", "attributes",
       {"style", "styles", "cartoon", "realistic", "photorealistic", "anime", "vintage",
        "futuristic", "minimalist", "watercolor", "sketch", "illustration", "cinematic", "3d",
        "rustic", "industrial", "bohemian", "pastel", "neon"}},
      {"activity", "actions",
       {"activity", "activities", "action", "actions", "painting", "writing", "reading",
        "cooking", "running", "dancing", "playing", "hiking", "surfing", "working", "operating",
        "brewing", "drinking", "exploring", "fighting", "saving"}},
      {"relationship", "relationships",
       {"together", "alone", "family", "families", "friends", "couple", "couples", "group",
        "team", "crowd", "community", "colleagues", "siblings", "parents"}},
  };
  return facets;
}

bool is_stopword(std::string_view word) { return stopwords().count(word) > 0; }

const std::vector<Scenario>& scenarios() {
  static const std::vector<Scenario> data = {
      {"S1", "Product Advertisement",
       "You are designing an advertising campaign for a new line of coffee machines. To ensure "
       "the campaign resonates with a wider audience, you use generative models to create "
       "marketing images that showcase a variety of users interacting with the product.",
       "Design an advertisement image showcasing a range of users operating coffee machines.",
       {1101, 1102, 1103, 1104}},
      {"S2", "Tourist Promotion",
       "You are creating a travel campaign to attract a variety of visitors to a specific "
       "destination. To make the promotional materials more engaging, you use generative models "
       "to design posters that highlight a broader array of experiences.",
       "Design a promotional poster to attract a variety of visitors to a tourist destination.",
       {2101, 2102, 2103, 2104}},
      {"S3", "Fictional Character Generation",
       "You are creating a superhero video game that\xE2\x80\x99s fun and relatable to a range of "
       "users. You decide to use generative models to help visualize a new character.",
       "Design a video game superhero character that is relatable.",
       {3101, 3102, 3103, 3104}},
      {"S4", "Interior Design",
       "You are helping design the furniture layout for a model one-bedroom rental apartment. To "
       "make the apartment appealing to different potential tenants, you try to visualize "
       "different furniture placements before setting everything up.",
       "Design an interior of an apartment that\xE2\x80\x99s appealing to potential tenants.",
       {4101, 4102, 4103, 4104}},
  };
  return data;
}

const Scenario* find_scenario(std::string_view id) {
  for (const auto& s : scenarios()) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

const std::vector<std::string>& fixture_prompts() {
  static const std::vector<std::string> prompts = {
      "A man in a blue shirt is riding a bicycle down the street",
      "Two children are playing soccer in a park",
      "A woman is cooking dinner in a small kitchen",
      "A dog is running through the grass",
      "An old man is reading a newspaper on a bench",
      "A group of friends are sitting at a cafe",
      "A musician is playing guitar on a stage",
      "A girl is painting a picture in a studio",
      "A worker is climbing a ladder near a building",
      "A couple is walking along the beach at sunset",
      "A chef is preparing food in a restaurant kitchen",
      "A boy is jumping into a lake",
      "A doctor is talking with a patient in an office",
      "A farmer is working in a field",
      "A woman is dancing in the rain",
      "A student is writing notes in a library",
      "A tourist is taking a photo of a mountain",
      "An ancient artist is composing a piece of work",
      "A cat is sleeping on a couch",
      "A family is eating breakfast together",
  };
  return prompts;
}

const std::vector<std::string>& builtin_words() {
  static const std::vector<std::string> words = [] {
    std::vector<std::string> out;
    std::set<std::string> seen;
    auto add = [&](std::string w) {
      std::string lowered;
      for (char c : w) {
        const auto uc = static_cast<unsigned char>(c);
        if (std::isalnum(uc) || c == '-' || c == '\'') {
          lowered.push_back(static_cast<char>(std::tolower(uc)));
        }
      }
      if (!lowered.empty() && seen.insert(lowered).second) out.push_back(lowered);
    };
    for (const auto& entry : lexicon()) {
      for (const auto& w : entry.words) add(w);
    }
    for (const auto& facet : preference_facets()) {
      for (const auto& w : facet.keywords) add(w);
    }
    for (const auto& w : stopwords()) add(w);
    for (const auto& p : fixture_prompts()) {
      for (auto& w : split_words(p)) add(w);
    }
    for (const auto& s : scenarios()) {
      for (auto& w : split_words(s.initial_prompt)) add(w);
      for (auto& w : split_words(s.background)) add(w);
    }
    for (auto& w : split_words(kGeneralWords)) add(w);
    return out;
  }();
  return words;
}

}  // namespace expanse
