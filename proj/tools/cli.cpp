#include "cli.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <netdyn/dynamics.hpp>
#include <netdyn/ratecontrol.hpp>
#include <netdyn/redmap.hpp>
#include <netdyn/throughput.hpp>
#include <netdyn/washout.hpp>

namespace netdyn::cli {

using json = nlohmann::json;

std::string sha256_hex(const std::string& data)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

namespace {

// ---------------------------------------------------------------- config parsing

// Walks the input one char at a time so the parser's position gives a line number.
struct LineCountingIter {
    using iterator_category = std::forward_iterator_tag;
    using value_type = char;
    using difference_type = std::ptrdiff_t;
    using pointer = const char*;
    using reference = const char&;

    const char* p = nullptr;
    int* line = nullptr;

    reference operator*() const { return *p; }
    LineCountingIter& operator++()
    {
        if (*p == '\n')
            ++*line;
        ++p;
        return *this;
    }
    LineCountingIter operator++(int)
    {
        LineCountingIter t = *this;
        ++*this;
        return t;
    }
    bool operator==(const LineCountingIter& o) const { return p == o.p; }
    bool operator!=(const LineCountingIter& o) const { return p != o.p; }
};

// Builds the DOM and records the line of every object key by JSON pointer.
class KeyLineSax {
public:
    KeyLineSax(json& root, const int* line) : dom_(root, false), line_(line) {}

    std::map<std::string, int> lines;
    std::string error;
    int error_line = 0;

    bool null() { return value(), dom_.null(); }
    bool boolean(bool v) { return value(), dom_.boolean(v); }
    bool number_integer(json::number_integer_t v) { return value(), dom_.number_integer(v); }
    bool number_unsigned(json::number_unsigned_t v) { return value(), dom_.number_unsigned(v); }
    bool number_float(json::number_float_t v, const std::string& s) { return value(), dom_.number_float(v, s); }
    bool string(std::string& v) { return value(), dom_.string(v); }
    bool binary(json::binary_t& v) { return value(), dom_.binary(v); }
    bool start_object(std::size_t n)
    {
        stack_.push_back({value(), true, {}, 0});
        return dom_.start_object(n);
    }
    bool key(std::string& k)
    {
        stack_.back().key = k;
        lines[stack_.back().path + "/" + k] = *line_;
        return dom_.key(k);
    }
    bool end_object()
    {
        stack_.pop_back();
        return dom_.end_object();
    }
    bool start_array(std::size_t n)
    {
        stack_.push_back({value(), false, {}, 0});
        return dom_.start_array(n);
    }
    bool end_array()
    {
        stack_.pop_back();
        return dom_.end_array();
    }
    bool parse_error(std::size_t, const std::string&, const nlohmann::detail::exception& ex)
    {
        error = ex.what();
        error_line = *line_;
        return false;
    }

private:
    struct Frame {
        std::string path;
        bool object;
        std::string key;
        std::size_t index;
    };

    // Path of the value that starts now.
    std::string value()
    {
        if (stack_.empty())
            return "";
        Frame& f = stack_.back();
        if (f.object)
            return f.path + "/" + f.key;
        return f.path + "/" + std::to_string(f.index++);
    }

    nlohmann::detail::json_sax_dom_parser<json> dom_;
    const int* line_;
    std::vector<Frame> stack_;
};

struct Config {
    json doc = json::object();
    std::map<std::string, int> lines;

    int line_of(const std::string& pointer) const
    {
        auto it = lines.find(pointer);
        return it == lines.end() ? 0 : it->second;
    }
};

Config parse_config_text(const std::string& text)
{
    Config c;
    int line = 1;
    LineCountingIter first{text.data(), &line};
    LineCountingIter last{text.data() + text.size(), &line};
    KeyLineSax sax(c.doc, &line);
    const bool ok = json::sax_parse(first, last, &sax, nlohmann::detail::input_format_t::json, true, true);
    if (!ok)
        throw ConfigError("malformed JSON: " + sax.error, sax.error_line);
    if (!c.doc.is_object())
        throw ConfigError("top level must be a JSON object", 1);
    c.lines = std::move(sax.lines);
    return c;
}

enum class Kind { number, integer, string, boolean, numbers };

using Schema = std::vector<std::pair<std::string, Kind>>;

const std::map<std::string, Schema>& sections()
{
    static const std::map<std::string, Schema> s = {
        {"system",
         {{"N", Kind::number}, {"C", Kind::number}, {"M", Kind::number}, {"R0", Kind::number}, {"B", Kind::number},
          {"model", Kind::string}, {"K", Kind::number}, {"alpha", Kind::number}, {"beta", Kind::number},
          {"b_ack", Kind::number}, {"T0", Kind::number}, {"k", Kind::number}, {"l", Kind::number},
          {"joint_root", Kind::boolean}, {"lambda_udp", Kind::number}}},
        {"red", {{"q_min", Kind::number}, {"q_max", Kind::number}, {"p_max", Kind::number}, {"w", Kind::number}}},
        {"axis", {{"name", Kind::string}, {"min", Kind::number}, {"max", Kind::number}, {"points", Kind::integer}}},
        {"scan",
         {{"n_init", Kind::integer}, {"n_iter", Kind::integer}, {"n_keep", Kind::integer},
          {"lyapunov_n", Kind::integer}, {"lyapunov_transient", Kind::integer}}},
        {"pdb", {{"along", Kind::string}, {"bracket", Kind::numbers}, {"controlled_bracket", Kind::numbers}}},
        {"bcb",
         {{"border", Kind::string}, {"m", Kind::integer}, {"window", Kind::number}, {"n_transient", Kind::integer},
          {"n_samples", Kind::integer}}},
        {"lyapunov", {{"n", Kind::integer}, {"n_transient", Kind::integer}, {"q0", Kind::number}}},
        {"kelly",
         {{"a", Kind::numbers}, {"b", Kind::number}, {"C", Kind::number}, {"N", Kind::number}, {"T", Kind::number},
          {"gain", Kind::number}, {"p_ur", Kind::number}, {"phi", Kind::number}, {"horizon", Kind::number},
          {"steps_per_delay", Kind::integer}, {"discard", Kind::number}, {"stride", Kind::integer},
          {"literal_T_star", Kind::boolean}}},
        {"boxes", {{"max_depth", Kind::integer}, {"tol", Kind::number}}},
        {"washout",
         {{"d", Kind::number}, {"k_l", Kind::number}, {"k_c", Kind::number}, {"actuator", Kind::string},
          {"clamp_lo", Kind::number}, {"clamp_hi", Kind::number}, {"steps", Kind::integer}, {"q0", Kind::number},
          {"z0", Kind::number}, {"lambda0", Kind::number}, {"b", Kind::number}, {"d_min", Kind::number},
          {"d_max", Kind::number}, {"d_points", Kind::integer}, {"k_min", Kind::number}, {"k_max", Kind::number},
          {"k_points", Kind::integer}}},
    };
    return s;
}

bool kind_matches(const json& v, Kind k)
{
    switch (k) {
    case Kind::number: return v.is_number();
    case Kind::integer: return v.is_number_integer();
    case Kind::string: return v.is_string();
    case Kind::boolean: return v.is_boolean();
    case Kind::numbers:
        if (!v.is_array())
            return false;
        for (const auto& e : v)
            if (!e.is_number())
                return false;
        return true;
    }
    return false;
}

const char* kind_name(Kind k)
{
    switch (k) {
    case Kind::number: return "a number";
    case Kind::integer: return "an integer";
    case Kind::string: return "a string";
    case Kind::boolean: return "a boolean";
    case Kind::numbers: return "an array of numbers";
    }
    return "?";
}

void validate_schema(const Config& c)
{
    for (auto it = c.doc.begin(); it != c.doc.end(); ++it) {
        const std::string ptr = "/" + it.key();
        if (it.key() == "command") {
            if (!it->is_string())
                throw ConfigError("'command' must be a string", c.line_of(ptr));
            continue;
        }
        if (it.key() == "seed") {
            if (!it->is_number_unsigned())
                throw ConfigError("'seed' must be a non-negative integer", c.line_of(ptr));
            continue;
        }
        auto sec = sections().find(it.key());
        if (sec == sections().end())
            throw ConfigError("unknown key '" + it.key() + "'", c.line_of(ptr));
        if (!it->is_object())
            throw ConfigError("'" + it.key() + "' must be an object", c.line_of(ptr));
        for (auto f = it->begin(); f != it->end(); ++f) {
            const std::string fptr = ptr + "/" + f.key();
            auto field = std::find_if(sec->second.begin(), sec->second.end(),
                                      [&](const auto& p) { return p.first == f.key(); });
            if (field == sec->second.end())
                throw ConfigError("unknown key '" + it.key() + "." + f.key() + "'", c.line_of(fptr));
            if (!kind_matches(*f, field->second))
                throw ConfigError("'" + it.key() + "." + f.key() + "' must be " + kind_name(field->second),
                                  c.line_of(fptr));
        }
    }
}

// ---------------------------------------------------------------- effective config

const std::vector<std::string> commands = {"scan", "pdb", "bcb", "chaos", "lyapunov", "dde", "delay-stability",
                                           "boxes", "washout-region", "washout-sim", "fixed-point"};

std::vector<std::string> sections_for(const std::string& cmd)
{
    if (cmd == "scan")
        return {"system", "red", "axis", "scan"};
    if (cmd == "pdb")
        return {"system", "red", "axis", "pdb", "washout"};
    if (cmd == "bcb")
        return {"system", "red", "axis", "bcb"};
    if (cmd == "chaos")
        return {"system", "red", "axis", "lyapunov"};
    if (cmd == "lyapunov")
        return {"system", "red", "axis", "lyapunov"};
    if (cmd == "fixed-point")
        return {"system", "red", "axis"};
    if (cmd == "dde" || cmd == "delay-stability")
        return {"kelly"};
    if (cmd == "boxes")
        return {"kelly", "boxes"};
    if (cmd == "washout-region" || cmd == "washout-sim")
        return {"system", "red", "washout"};
    return {};
}

json defaults(const std::string& section)
{
    if (section == "system")
        return {{"N", 250.0}, {"C", 75e6}, {"M", 4000.0}, {"R0", 0.1}, {"B", 3750.0}, {"model", "simple"}};
    if (section == "red")
        return {{"q_min", 250.0}, {"q_max", 750.0}, {"p_max", 0.1}, {"w", 0.1}};
    if (section == "axis")
        return {{"name", "w"}, {"min", 0.0}, {"max", 0.0}, {"points", 0}};
    if (section == "scan")
        return {{"n_init", 4}, {"n_iter", 1000}, {"n_keep", 10}, {"lyapunov_n", 2000}, {"lyapunov_transient", 1000}};
    if (section == "pdb")
        return {{"along", "w"}, {"bracket", {1e-6, 1.0 - 1e-6}}};
    if (section == "bcb")
        return {{"border", "b1"}, {"m", 2}, {"window", 1e-3}, {"n_transient", 10000}, {"n_samples", 200000}};
    if (section == "lyapunov")
        return {{"n", 20000}, {"n_transient", 2000}};
    if (section == "kelly")
        return {{"a", {3.0}},      {"b", 5.0},      {"C", 5.0},           {"N", 2.0},
                {"T", 1.0},        {"gain", 1.0},   {"p_ur", 0.0},        {"phi", 2.0},
                {"horizon", 60.0}, {"discard", 0.5}, {"steps_per_delay", 200}, {"stride", 20},
                {"literal_T_star", false}};
    if (section == "boxes")
        return {{"max_depth", 200}, {"tol", 1e-9}};
    if (section == "washout")
        return {{"d", 0.2},     {"k_l", 0.0},   {"k_c", 0.0},    {"actuator", "p_max"}, {"steps", 1000},
                {"d_min", 0.0}, {"d_max", 2.0}, {"d_points", 41}, {"k_min", -1.0},      {"k_max", 3.0},
                {"k_points", 41}};
    return json::object();
}

struct Options {
    std::string command;
    std::optional<std::string> config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> axis;
};

json effective_config(const Options& opt, const Config& c)
{
    json eff = json::object();
    eff["command"] = opt.command;
    eff["seed"] = opt.seed ? *opt.seed : (c.doc.contains("seed") ? c.doc["seed"].get<std::uint64_t>() : default_seed);
    for (const auto& s : sections_for(opt.command)) {
        json sec = defaults(s);
        if (c.doc.contains(s))
            for (auto it = c.doc[s].begin(); it != c.doc[s].end(); ++it)
                sec[it.key()] = *it;
        // The washout section is only meaningful for pdb when given explicitly.
        if (s == "washout" && opt.command == "pdb" && !c.doc.contains(s))
            continue;
        eff[s] = sec;
    }
    if (opt.axis) {
        std::vector<std::string> parts;
        std::stringstream ss(*opt.axis);
        for (std::string p; std::getline(ss, p, ':');)
            parts.push_back(p);
        if (parts.size() != 4)
            throw ConfigError("--axis must look like name:min:max:points");
        try {
            std::size_t used = 0;
            const double lo = std::stod(parts[1], &used);
            if (used != parts[1].size())
                throw std::invalid_argument("min");
            const double hi = std::stod(parts[2], &used);
            if (used != parts[2].size())
                throw std::invalid_argument("max");
            const long long pts = std::stoll(parts[3], &used);
            if (used != parts[3].size() || pts < 0)
                throw std::invalid_argument("points");
            eff["axis"] = {{"name", parts[0]}, {"min", lo}, {"max", hi}, {"points", pts}};
        } catch (const std::logic_error&) {
            throw ConfigError("--axis has a malformed number: " + *opt.axis);
        }
    }
    return eff;
}

// ---------------------------------------------------------------- typed builders

double num(const json& sec, const char* k) { return sec.at(k).get<double>(); }

long long integer(const json& sec, const char* k) { return sec.at(k).get<long long>(); }

std::optional<double> opt_num(const json& sec, const char* k)
{
    if (sec.contains(k))
        return sec.at(k).get<double>();
    return std::nullopt;
}

void require_only(const json& sys, const std::set<std::string>& allowed, const std::string& model, const Config& c)
{
    static const std::set<std::string> common = {"N", "C", "M", "R0", "B", "model"};
    for (auto it = sys.begin(); it != sys.end(); ++it)
        if (!common.count(it.key()) && !allowed.count(it.key()))
            throw ConfigError("'system." + it.key() + "' does not apply to model " + model,
                              c.line_of("/system/" + it.key()));
}

MapModel build_map(const json& eff, const Config& c)
{
    const json& sys = eff.at("system");
    const json& red = eff.at("red");
    const std::string model = sys.at("model").get<std::string>();
    ThroughputModel tm;
    if (model == "simple") {
        require_only(sys, {"K"}, model, c);
        tm = SimpleModel{sys.contains("K") ? num(sys, "K") : std::sqrt(1.5)};
    } else if (model == "detailed") {
        require_only(sys, {"alpha", "beta", "b_ack", "T0"}, model, c);
        DetailedModel d;
        d.alpha = opt_num(sys, "alpha").value_or(d.alpha);
        d.beta = opt_num(sys, "beta").value_or(d.beta);
        d.b_ack = opt_num(sys, "b_ack").value_or(d.b_ack);
        d.T0 = opt_num(sys, "T0").value_or(5.0 * num(sys, "R0"));
        tm = d;
    } else if (model == "binomial") {
        require_only(sys, {"alpha", "beta", "k", "l", "joint_root"}, model, c);
        BinomialModel b;
        b.alpha = opt_num(sys, "alpha").value_or(b.alpha);
        b.beta = opt_num(sys, "beta").value_or(b.beta);
        b.k = opt_num(sys, "k").value_or(b.k);
        b.l = opt_num(sys, "l").value_or(b.l);
        b.joint_root = sys.contains("joint_root") && sys.at("joint_root").get<bool>();
        tm = b;
    } else if (model == "mixed_udp") {
        require_only(sys, {"K", "lambda_udp"}, model, c);
        MixedUdpModel u;
        u.K = opt_num(sys, "K").value_or(u.K);
        u.lambda_udp = opt_num(sys, "lambda_udp").value_or(0.0);
        tm = u;
    } else {
        throw ConfigError("unknown throughput model '" + model + "'", c.line_of("/system/model"));
    }
    try {
        return MapModel(make_system(num(sys, "N"), num(sys, "C"), num(sys, "M"), num(sys, "R0"), num(sys, "B"), tm),
                        RedParams{num(red, "q_min"), num(red, "q_max"), num(red, "p_max"), num(red, "w")});
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::domain)
            throw ConfigError(e.what());
        throw;
    }
}

struct Grid {
    Axis axis = Axis::w;
    std::vector<double> values;
    bool given = false;
};

Grid build_grid(const json& eff, const Config& c)
{
    Grid g;
    if (!eff.contains("axis"))
        return g;
    const json& a = eff.at("axis");
    try {
        g.axis = parse_axis(a.at("name").get<std::string>());
    } catch (const Error& e) {
        throw ConfigError(e.what(), c.line_of("/axis/name"));
    }
    const long long n = integer(a, "points");
    const double lo = num(a, "min");
    const double hi = num(a, "max");
    if (n < 0)
        throw ConfigError("axis.points must be >= 0", c.line_of("/axis/points"));
    if (n > 1 && !(hi > lo))
        throw ConfigError("axis.max must exceed axis.min", c.line_of("/axis/max"));
    g.given = n > 0 || c.doc.contains("axis");
    for (long long i = 0; i < n; ++i)
        g.values.push_back(n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1));
    return g;
}

KellyParams build_kelly(const json& eff, const Config& c)
{
    const json& k = eff.at("kelly");
    KellyParams p;
    p.a = k.at("a").get<std::vector<double>>();
    p.b = num(k, "b");
    p.C = num(k, "C");
    p.N = num(k, "N");
    p.T = num(k, "T");
    p.gain = num(k, "gain");
    p.p_ur = num(k, "p_ur");
    if (!(p.T > 0.0))
        throw ConfigError("kelly.T: delay must be positive", c.line_of("/kelly/T"));
    try {
        validate(p);
    } catch (const Error& e) {
        throw ConfigError(e.what(), c.line_of("/kelly"));
    }
    return p;
}

WashoutParams build_washout(const json& w, const Config& c)
{
    WashoutParams p;
    p.d = num(w, "d");
    p.k_l = num(w, "k_l");
    p.k_c = num(w, "k_c");
    const std::string act = w.at("actuator").get<std::string>();
    if (act == "p_max")
        p.actuator = Actuator::p_max;
    else if (act == "q_max")
        p.actuator = Actuator::q_max;
    else
        throw ConfigError("washout.actuator must be p_max or q_max", c.line_of("/washout/actuator"));
    p.clamp_lo = opt_num(w, "clamp_lo");
    p.clamp_hi = opt_num(w, "clamp_hi");
    if (!(p.d > 0.0 && p.d < 2.0))
        throw ConfigError("washout.d must lie in (0, 2)", c.line_of("/washout/d"));
    return p;
}

// ---------------------------------------------------------------- CSV

std::string fmt(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt(long long v) { return std::to_string(v); }

std::string fmt(bool v) { return v ? "1" : "0"; }

class Table {
public:
    void meta(const std::string& key, const std::string& value) { meta_.push_back("# " + key + ": " + value); }
    void header(std::vector<std::string> h) { header_ = std::move(h); }
    void row(std::vector<std::string> r)
    {
        if (r.size() != header_.size())
            throw std::logic_error("row width does not match header");
        rows_.push_back(std::move(r));
    }

    void write(std::ostream& os) const
    {
        for (const auto& m : meta_)
            os << m << '\n';
        write_row(os, header_);
        for (const auto& r : rows_)
            write_row(os, r);
    }

private:
    static void write_row(std::ostream& os, const std::vector<std::string>& r)
    {
        for (std::size_t i = 0; i < r.size(); ++i)
            os << (i ? "," : "") << r[i];
        os << '\n';
    }

    std::vector<std::string> meta_;
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

std::string regime_label(const BifurcationPoint& p)
{
    if (p.regime == Regime::periodic)
        return "period-" + std::to_string(p.period);
    return to_string(p.regime);
}

std::string chaos_label(const MapModel& m)
{
    try {
        return to_string(li_yorke_check(m).verdict);
    } catch (const Error&) {
        return "n/a";
    }
}

// ---------------------------------------------------------------- commands

struct Context {
    const json& eff;
    const Config& cfg;
    std::uint64_t seed;
    Table& table;
    std::ostream& err;
};

void cmd_scan(Context& cx)
{
    const MapModel base = build_map(cx.eff, cx.cfg);
    const Grid g = build_grid(cx.eff, cx.cfg);
    const json& s = cx.eff.at("scan");
    ScanOptions opt;
    opt.n_init = static_cast<int>(integer(s, "n_init"));
    opt.n_iter = static_cast<int>(integer(s, "n_iter"));
    opt.n_keep = static_cast<int>(integer(s, "n_keep"));
    opt.lyapunov_n = static_cast<int>(integer(s, "lyapunov_n"));
    opt.lyapunov_transient = static_cast<int>(integer(s, "lyapunov_transient"));
    opt.seed = cx.seed;
    if (opt.n_init < 1 || opt.n_keep < 1 || opt.n_iter < opt.n_keep || opt.lyapunov_n < 1000 ||
        opt.lyapunov_transient < 0)
        throw ConfigError("scan needs n_init >= 1, n_iter >= n_keep >= 1 and lyapunov_n >= 1000",
                          cx.cfg.line_of("/scan"));
    cx.table.meta("axis", to_string(g.axis));
    cx.table.header({"param", "init_index", "iterate_index", "q_avg_pkts", "q_inst_pkts", "lyapunov", "chaos_case",
                     "regime", "degenerate"});
    const auto points = bifurcation_scan(base, g.axis, g.values, opt);
    for (const auto& p : points) {
        const std::string chaos = chaos_label(with_axis(base, g.axis, p.value));
        for (std::size_t i = 0; i < p.averaged.size(); ++i)
            for (std::size_t j = 0; j < p.averaged[i].size(); ++j) {
                const long long k = opt.n_iter - opt.n_keep + static_cast<long long>(j) + 1;
                cx.table.row({fmt(p.value), fmt(static_cast<long long>(i)), fmt(k), fmt(p.averaged[i][j]),
                              fmt(p.instantaneous[i][j]), fmt(p.lyapunov), chaos, regime_label(p), fmt(p.degenerate)});
            }
    }
}

void cmd_fixed_point(Context& cx)
{
    const MapModel base = build_map(cx.eff, cx.cfg);
    Grid g = build_grid(cx.eff, cx.cfg);
    cx.table.meta("axis", to_string(g.axis));
    cx.table.header({"param", "q_star_pkts", "q_star_norm", "b1_pkts", "b2_pkts", "p0", "p1", "lambda", "w_crit",
                     "S", "degenerate"});
    if (!g.given)
        g.values = {axis_value(base, g.axis)};
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (double v : g.values) {
        const MapModel m = with_axis(base, g.axis, v);
        const Borders& b = m.borders();
        double q = nan, lam = nan, wc = nan, S = nan;
        if (!b.degenerate()) {
            q = fixed_point(m);
            lam = eigenvalue(q, m);
            wc = w_crit(m);
            S = stability_S(m);
        }
        cx.table.row({fmt(v), fmt(q), fmt(q / m.system().B), fmt(b.b1), fmt(b.b2), fmt(b.p0), fmt(b.p1), fmt(lam),
                      fmt(wc), fmt(S), fmt(b.degenerate())});
    }
}

void cmd_pdb(Context& cx)
{
    const MapModel base = build_map(cx.eff, cx.cfg);
    const Grid g = build_grid(cx.eff, cx.cfg);
    const json& p = cx.eff.at("pdb");
    Axis along;
    try {
        along = parse_axis(p.at("along").get<std::string>());
    } catch (const Error& e) {
        throw ConfigError(e.what(), cx.cfg.line_of("/pdb/along"));
    }
    const auto br = p.at("bracket").get<std::vector<double>>();
    if (br.size() != 2 || !(br[0] < br[1]))
        throw ConfigError("pdb.bracket must be [lo, hi] with lo < hi", cx.cfg.line_of("/pdb/bracket"));
    if (g.given && g.axis == along)
        throw ConfigError("pdb: the scan axis must differ from pdb.along", cx.cfg.line_of("/axis/name"));

    std::optional<WashoutParams> ctrl;
    std::vector<double> cbr;
    if (cx.eff.contains("washout")) {
        if (along != Axis::R0 && along != Axis::N)
            throw ConfigError("controlled thresholds need pdb.along = R0 or N", cx.cfg.line_of("/pdb/along"));
        ctrl = build_washout(cx.eff.at("washout"), cx.cfg);
        if (p.contains("controlled_bracket")) {
            cbr = p.at("controlled_bracket").get<std::vector<double>>();
            if (cbr.size() != 2 || !(cbr[0] < cbr[1]))
                throw ConfigError("pdb.controlled_bracket must be [lo, hi] with lo < hi",
                                  cx.cfg.line_of("/pdb/controlled_bracket"));
        }
    }

    cx.table.meta("along", to_string(along));
    std::vector<std::string> head;
    if (g.given)
        head.push_back("param");
    head.push_back("critical");
    if (ctrl)
        head.push_back("controlled");
    cx.table.header(head);

    std::vector<double> values = g.given ? g.values : std::vector<double>{0.0};
    std::vector<std::pair<double, double>> curve;
    for (double v : values) {
        const MapModel m = g.given ? with_axis(base, g.axis, v) : base;
        const double crit = find_pdb(m, along, br[0], br[1]);
        std::vector<std::string> row;
        if (g.given)
            row.push_back(fmt(v));
        row.push_back(fmt(crit));
        if (ctrl) {
            // Default bracket: from the open-loop point toward the side the control extends.
            double lo = cbr.empty() ? (along == Axis::R0 ? crit : br[0]) : cbr[0];
            double hi = cbr.empty() ? (along == Axis::R0 ? br[1] : crit) : cbr[1];
            row.push_back(fmt(critical_parameter(m, along, *ctrl, lo, hi)));
        }
        cx.table.row(row);
        curve.emplace_back(v, crit);
    }
    if (g.given && along == Axis::w && (g.axis == Axis::N || g.axis == Axis::R0)) {
        bool mono = true;
        for (std::size_t i = 1; i < curve.size(); ++i) {
            const double d = curve[i].second - curve[i - 1].second;
            mono = mono && (g.axis == Axis::N ? d > 0.0 : d < 0.0);
        }
        cx.table.meta("monotone", fmt(mono));
        if (!mono)
            cx.err << "warning: critical w is not monotone along " << to_string(g.axis) << '\n';
    }
}

void cmd_bcb(Context& cx)
{
    const MapModel base = build_map(cx.eff, cx.cfg);
    Grid g = build_grid(cx.eff, cx.cfg);
    const json& b = cx.eff.at("bcb");
    const std::string border = b.at("border").get<std::string>();
    if (border != "b1" && border != "b2")
        throw ConfigError("bcb.border must be b1 or b2", cx.cfg.line_of("/bcb/border"));
    BcbOptions opt;
    opt.window_rel = num(b, "window");
    opt.n_transient = static_cast<int>(integer(b, "n_transient"));
    opt.n_samples = static_cast<int>(integer(b, "n_samples"));
    opt.seed = cx.seed;
    const int m = static_cast<int>(integer(b, "m"));
    if (m < 1 || opt.n_samples < 2 * m || opt.n_transient < 0 || !(opt.window_rel > 0.0))
        throw ConfigError("bcb needs m >= 1, n_samples >= 2m, n_transient >= 0 and window > 0",
                          cx.cfg.line_of("/bcb"));
    if (!g.given)
        g.values = {axis_value(base, g.axis)};
    cx.table.meta("axis", to_string(g.axis));
    cx.table.meta("border", border);
    cx.table.header({"param", "a", "b", "straddle", "case8", "in_Pm", "outcome", "min_distance_pkts", "windows"});
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (double v : g.values) {
        try {
            const BcbReport r =
                bcb_classify(base, g.axis, v, border == "b1" ? BorderSel::b1 : BorderSel::b2, m, opt);
            cx.table.row({fmt(v), fmt(r.a), fmt(r.b), fmt(r.straddle), fmt(r.case8), fmt(r.in_Pm),
                          to_string(r.outcome), fmt(r.min_distance), fmt(static_cast<long long>(r.windows))});
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::no_bcb)
                throw;
            cx.table.row({fmt(v), fmt(nan), fmt(nan), fmt(false), fmt(false), fmt(false), "no-bcb", fmt(nan), "0"});
        }
    }
}

struct LyapunovSettings {
    int n;
    int n_transient;
    std::optional<double> q0;
};

LyapunovSettings lyapunov_settings(Context& cx)
{
    const json& l = cx.eff.at("lyapunov");
    LyapunovSettings s{static_cast<int>(integer(l, "n")), static_cast<int>(integer(l, "n_transient")),
                       opt_num(l, "q0")};
    if (s.n < 1000 || s.n_transient < 0)
        throw ConfigError("lyapunov needs n >= 1000 and n_transient >= 0", cx.cfg.line_of("/lyapunov"));
    return s;
}

double start_point(const LyapunovSettings& s, const MapModel& m, std::uint64_t seed, std::size_t idx)
{
    if (s.q0)
        return *s.q0;
    Stream rng(seed, idx, 0);
    return rng.open_unit() * m.system().B;
}

void cmd_lyapunov(Context& cx)
{
    const MapModel base = build_map(cx.eff, cx.cfg);
    Grid g = build_grid(cx.eff, cx.cfg);
    const LyapunovSettings s = lyapunov_settings(cx);
    if (!g.given)
        g.values = {axis_value(base, g.axis)};
    cx.table.meta("axis", to_string(g.axis));
    cx.table.header({"param", "lyapunov", "border_events"});
    for (std::size_t i = 0; i < g.values.size(); ++i) {
        const MapModel m = with_axis(base, g.axis, g.values[i]);
        const LyapunovResult r = lyapunov_exponent(m, start_point(s, m, cx.seed, i), s.n, s.n_transient);
        cx.table.row({fmt(g.values[i]), fmt(r.value), fmt(static_cast<long long>(r.border_events))});
    }
}

void cmd_chaos(Context& cx)
{
    const MapModel base = build_map(cx.eff, cx.cfg);
    Grid g = build_grid(cx.eff, cx.cfg);
    const LyapunovSettings s = lyapunov_settings(cx);
    if (!g.given)
        g.values = {axis_value(base, g.axis)};
    cx.table.meta("axis", to_string(g.axis));
    cx.table.header({"param", "case", "a_pkts", "b_pkts", "c_pkts", "d_pkts", "margin", "lyapunov"});
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t i = 0; i < g.values.size(); ++i) {
        const MapModel m = with_axis(base, g.axis, g.values[i]);
        const double lyap = lyapunov_exponent(m, start_point(s, m, cx.seed, i), s.n, s.n_transient).value;
        try {
            const ChaosVerdict v = li_yorke_check(m);
            cx.table.row({fmt(g.values[i]), to_string(v.verdict), fmt(v.a), fmt(v.b), fmt(v.c), fmt(v.d),
                          fmt(v.margin), fmt(lyap)});
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::assumption_violated && e.kind() != ErrorKind::degenerate_border)
                throw;
            cx.table.row({fmt(g.values[i]), to_string(e.kind()), fmt(nan), fmt(nan), fmt(nan), fmt(nan), fmt(nan),
                          fmt(lyap)});
        }
    }
}

void cmd_dde(Context& cx)
{
    const KellyParams p = build_kelly(cx.eff, cx.cfg);
    const json& k = cx.eff.at("kelly");
    const double phi = num(k, "phi");
    const double horizon = num(k, "horizon");
    const int m = static_cast<int>(integer(k, "steps_per_delay"));
    const long long stride = integer(k, "stride");
    const double discard = num(k, "discard");
    if (!(phi > 0.0 && phi <= p.cap()))
        throw ConfigError("kelly.phi must lie in (0, C/N]", cx.cfg.line_of("/kelly/phi"));
    if (m < 1 || stride < 1 || !(horizon > 0.0) || !(discard >= 0.0 && discard < 1.0))
        throw ConfigError("dde needs steps_per_delay >= 1, stride >= 1, horizon > 0 and discard in [0, 1)",
                          cx.cfg.line_of("/kelly"));
    const DdeTrajectory tr = dde_integrate(p, phi, horizon, m);
    if (tr.floor_events > 0)
        cx.err << "warning: rate hit the floor " << tr.floor_events << " times\n";
    if (tr.cap_events > 0)
        cx.err << "warning: rate clamped at C/N " << tr.cap_events << " times; raise steps_per_delay if the step T/"
               << m << " is too coarse for the gain\n";

    const double nan = std::numeric_limits<double>::quiet_NaN();
    double x_star = nan, lambda = nan, T_star = nan;
    if (p.homogeneous()) {
        const KellyFixedPoint fp = p.p_ur == 0.0 ? kelly_fixed_point_eig(p) : nonresponsive_analysis(p);
        x_star = fp.x_star;
        lambda = fp.lambda;
        if (p.p_ur == 0.0)
            T_star = delay_stability(p, k.at("literal_T_star").get<bool>()).T_star;
    }
    const OscillationMetrics om =
        oscillation_metrics(tr, std::isnan(x_star) ? tr.x[0].back() : x_star, p.T, discard);
    const bool converged = om.max - om.min < 1e-6 * p.cap();
    cx.table.meta("x_star", fmt(x_star));
    cx.table.meta("lambda", fmt(lambda));
    cx.table.meta("T_star", fmt(T_star));
    cx.table.meta("period", om.period && !converged ? fmt(*om.period) : "");
    cx.table.meta("min", fmt(om.min));
    cx.table.meta("max", fmt(om.max));
    cx.table.meta("sop_flag", fmt(om.sop && !converged));
    cx.table.meta("converged", fmt(converged));
    cx.table.meta("floor_events", fmt(static_cast<long long>(tr.floor_events)));
    cx.table.header({"t", "user_index", "rate"});
    for (std::size_t u = 0; u < tr.x.size(); ++u)
        for (std::size_t i = 0; i < tr.x[u].size(); i += static_cast<std::size_t>(stride))
            cx.table.row({fmt(tr.time(i)), fmt(static_cast<long long>(u)), fmt(tr.x[u][i])});
}

void cmd_delay_stability(Context& cx)
{
    const KellyParams p = build_kelly(cx.eff, cx.cfg);
    if (!p.homogeneous() || p.p_ur != 0.0)
        throw ConfigError("delay-stability needs one exponent in kelly.a and p_ur = 0", cx.cfg.line_of("/kelly"));
    const KellyFixedPoint fp = kelly_fixed_point_eig(p);
    const DelayStability d = delay_stability(p, cx.eff.at("kelly").at("literal_T_star").get<bool>());
    cx.table.header({"x_star", "lambda", "A", "B", "T_star", "delay_independent", "stable_at_T"});
    cx.table.row({fmt(fp.x_star), fmt(fp.lambda), fmt(d.A), fmt(d.B), fmt(d.T_star), fmt(d.delay_independent),
                  fmt(d.delay_independent || p.T <= d.T_star)});
}

void cmd_boxes(Context& cx)
{
    const KellyParams p = build_kelly(cx.eff, cx.cfg);
    const json& b = cx.eff.at("boxes");
    const long long depth = integer(b, "max_depth");
    const double tol = num(b, "tol");
    if (depth < 0 || !(tol > 0.0))
        throw ConfigError("boxes needs max_depth >= 0 and tol > 0", cx.cfg.line_of("/boxes"));
    const BoxSequence bs = nested_boxes(p, static_cast<int>(depth), tol);
    cx.table.meta("converged", fmt(bs.converged));
    cx.table.meta("diameter", fmt(bs.diameter));
    cx.table.header({"depth", "user_index", "lo", "hi", "diameter"});
    for (std::size_t i = 0; i < bs.boxes.size(); ++i)
        for (std::size_t u = 0; u < bs.boxes[i].lo.size(); ++u)
            cx.table.row({fmt(static_cast<long long>(i)), fmt(static_cast<long long>(u)), fmt(bs.boxes[i].lo[u]),
                          fmt(bs.boxes[i].hi[u]), fmt(bs.boxes[i].diameter())});
}

void cmd_washout_region(Context& cx)
{
    const json& w = cx.eff.at("washout");
    const WashoutParams ctrl = build_washout(w, cx.cfg);
    double lambda0 = 0.0, b = 0.0;
    if (w.contains("lambda0") != w.contains("b"))
        throw ConfigError("washout.lambda0 and washout.b go together", cx.cfg.line_of("/washout"));
    if (w.contains("lambda0")) {
        lambda0 = num(w, "lambda0");
        b = num(w, "b");
    } else {
        const MapModel m = build_map(cx.eff, cx.cfg);
        lambda0 = open_loop_lambda(m);
        b = actuation_gain_b(m, ctrl.actuator);
    }
    const long long nd = integer(w, "d_points");
    const long long nk = integer(w, "k_points");
    const double d0 = num(w, "d_min"), d1 = num(w, "d_max"), k0 = num(w, "k_min"), k1 = num(w, "k_max");
    if (nd < 0 || nk < 0)
        throw ConfigError("washout grid point counts must be >= 0", cx.cfg.line_of("/washout"));
    std::optional<StabilityTriangle> tri;
    if (lambda0 < -1.0 && b > 0.0)
        tri = stability_triangle(lambda0, b);
    cx.table.meta("lambda0", fmt(lambda0));
    cx.table.meta("b", fmt(b));
    if (tri)
        for (int i = 0; i < 3; ++i)
            cx.table.meta("vertex" + std::to_string(i), fmt(tri->vertices[i][0]) + " " + fmt(tri->vertices[i][1]));
    cx.table.header({"d", "k_l", "jury_verdict", "spectral_radius", "in_triangle"});
    auto lin = [](double lo, double hi, long long n, long long i) {
        return n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    };
    for (long long i = 0; i < nd; ++i)
        for (long long j = 0; j < nk; ++j) {
            const double d = lin(d0, d1, nd, i);
            const double k = lin(k0, k1, nk, j);
            const JuryVerdict v = jury_stability(lambda0, b, d, k);
            cx.table.row({fmt(d), fmt(k), fmt(v.stable), fmt(v.spectral_radius),
                          tri ? fmt(tri->contains(d, k)) : std::string("n/a")});
        }
}

void cmd_washout_sim(Context& cx)
{
    const MapModel m = build_map(cx.eff, cx.cfg);
    const json& w = cx.eff.at("washout");
    const WashoutParams ctrl = build_washout(w, cx.cfg);
    const long long steps = integer(w, "steps");
    if (steps < 0)
        throw ConfigError("washout.steps must be >= 0", cx.cfg.line_of("/washout/steps"));
    const double B = m.system().B;
    std::optional<double> q_star;
    if (!m.borders().degenerate())
        q_star = fixed_point(m);
    const double q0 = opt_num(w, "q0").value_or(q_star ? *q_star + 1.0 : 0.5 * B);
    const double z0 = opt_num(w, "z0").value_or((q_star ? *q_star : q0) / ctrl.d);
    if (!(q0 >= 0.0 && q0 <= B))
        throw ConfigError("washout.q0 must lie in [0, B]", cx.cfg.line_of("/washout/q0"));
    cx.table.meta("q_star", q_star ? fmt(*q_star) : "");
    cx.table.header({"step", "q_avg_pkts", "q_inst_pkts", "z", "u", std::string(to_string(ctrl.actuator)) + "_actuated",
                     "saturated"});
    ControlledState s{q0, z0};
    const double wgt = m.red().w;
    long long saturated = 0;
    for (long long k = 0; k < steps; ++k) {
        const FilterOutput f = washout_step(s, ctrl.d);
        const double u = control_signal(f.y, ctrl.k_l, ctrl.k_c);
        const ControlledStep st = controlled_map_step(s, m, ctrl);
        saturated += st.saturated;
        cx.table.row({fmt(k), fmt(s.q), fmt(instantaneous_queue(s.q, st.next.q, wgt)), fmt(s.z), fmt(u),
                      fmt(st.actuated), fmt(st.saturated)});
        s = st.next;
    }
    if (saturated > 0)
        cx.err << "warning: actuator saturated on " << saturated << " steps\n";
}

const std::map<std::string, std::function<void(Context&)>>& handlers()
{
    static const std::map<std::string, std::function<void(Context&)>> h = {
        {"scan", cmd_scan},
        {"pdb", cmd_pdb},
        {"bcb", cmd_bcb},
        {"chaos", cmd_chaos},
        {"lyapunov", cmd_lyapunov},
        {"dde", cmd_dde},
        {"delay-stability", cmd_delay_stability},
        {"boxes", cmd_boxes},
        {"washout-region", cmd_washout_region},
        {"washout-sim", cmd_washout_sim},
        {"fixed-point", cmd_fixed_point},
    };
    return h;
}

std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError("cannot read config file '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Dynamics of TCP-RED maps, delayed rate control and washout-controlled RED", "netdyn"};
    app.set_version_flag("--version", std::string("netdyn ") + version);
    Options opt;
    std::string seed_text;
    app.add_option("command", opt.command, "Command to run")->required()->check(CLI::IsMember(commands));
    app.add_option("--config", opt.config_path, "JSON config file");
    app.add_option("--seed", seed_text, "PRNG seed (unsigned 64-bit)");
    app.add_option("--out", opt.out, "Output CSV path (default: stdout)");
    app.add_option("--axis", opt.axis, "Grid override, name:min:max:points");

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << (dynamic_cast<const CLI::CallForVersion*>(&e) ? std::string("netdyn ") + version + "\n"
                                                                 : app.help());
            return ok;
        }
        err << "error: " << e.what() << '\n';
        return config_error;
    }

    try {
        if (!seed_text.empty()) {
            std::size_t used = 0;
            if (seed_text[0] == '-')
                throw ConfigError("--seed must be a non-negative integer");
            try {
                opt.seed = std::stoull(seed_text, &used, 10);
            } catch (const std::logic_error&) {
                throw ConfigError("--seed must be a non-negative integer");
            }
            if (used != seed_text.size())
                throw ConfigError("--seed must be a non-negative integer");
        }
        Config cfg;
        if (opt.config_path) {
            cfg = parse_config_text(read_file(*opt.config_path));
            validate_schema(cfg);
            if (cfg.doc.contains("command") && cfg.doc["command"].get<std::string>() != opt.command)
                throw ConfigError("config is for command '" + cfg.doc["command"].get<std::string>() + "'",
                                  cfg.line_of("/command"));
        }
        const json eff = effective_config(opt, cfg);
        const std::string dumped = eff.dump();
        const std::uint64_t seed = eff.at("seed").get<std::uint64_t>();

        Table table;
        table.meta("netdyn", version);
        table.meta("command", opt.command);
        table.meta("seed", std::to_string(seed));
        table.meta("prng", prng_name);
        table.meta("config_sha256", sha256_hex(dumped));
        table.meta("config", dumped);
        Context cx{eff, cfg, seed, table, err};
        handlers().at(opt.command)(cx);

        if (opt.out) {
            std::ofstream f(*opt.out, std::ios::binary);
            if (!f)
                throw ConfigError("cannot write '" + *opt.out + "'");
            table.write(f);
        } else {
            table.write(out);
        }
        return ok;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return config_error;
    } catch (const Error& e) {
        err << "numerical failure: " << e.what() << '\n';
        return numerical_error;
    }
}

} // namespace netdyn::cli
