#include <fstream>
#include <sstream>

#include <catch_amalgamated.hpp>

#include <netdyn/washout.hpp>

#include "cli.hpp"
#include "common.hpp"

using namespace netdyn;
using Catch::Approx;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run_cli(std::vector<std::string> args)
{
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string write_config(const std::string& name, const std::string& text)
{
    std::ofstream(name) << text;
    return name;
}

std::vector<std::string> lines_of(const std::string& s)
{
    std::vector<std::string> v;
    std::istringstream in(s);
    for (std::string l; std::getline(in, l);)
        v.push_back(l);
    return v;
}

std::string meta(const std::string& csv, const std::string& key)
{
    const std::string prefix = "# " + key + ": ";
    for (const auto& l : lines_of(csv))
        if (l.rfind(prefix, 0) == 0)
            return l.substr(prefix.size());
    return "<missing>";
}

struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t col(const std::string& name) const
    {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name)
                return i;
        FAIL("no column " << name);
        return 0;
    }
};

Csv parse(const std::string& text)
{
    Csv c;
    for (const auto& l : lines_of(text)) {
        if (l.empty() || l[0] == '#')
            continue;
        std::vector<std::string> cells;
        std::stringstream ss(l);
        for (std::string cell; std::getline(ss, cell, ',');)
            cells.push_back(cell);
        if (!l.empty() && l.back() == ',')
            cells.emplace_back();
        if (c.header.empty())
            c.header = cells;
        else
            c.rows.push_back(cells);
    }
    for (const auto& r : c.rows)
        REQUIRE(r.size() == c.header.size());
    return c;
}

} // namespace

TEST_CASE("sha256")
{
    CHECK(cli::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("empty grid gives a header-only table")
{
    const Result r = run_cli({"scan"});
    REQUIRE(r.code == 0);
    const Csv c = parse(r.out);
    CHECK(c.rows.empty());
    CHECK(c.header == std::vector<std::string>{"param", "init_index", "iterate_index", "q_avg_pkts", "q_inst_pkts",
                                               "lyapunov", "chaos_case", "regime", "degenerate"});
    CHECK(meta(r.out, "seed") == "20020601");
    CHECK(meta(r.out, "prng") == "mt19937_64/seed_seq v1");
    CHECK(meta(r.out, "netdyn") == cli::version);
}

TEST_CASE("scan output is deterministic and round-trips through its embedded config")
{
    const Result a = run_cli({"scan", "--axis", "w:0.14:0.2:7", "--seed", "42"});
    const Result b = run_cli({"scan", "--axis", "w:0.14:0.2:7", "--seed", "42"});
    REQUIRE(a.code == 0);
    CHECK(cli::sha256_hex(a.out) == cli::sha256_hex(b.out));
    CHECK(meta(a.out, "config_sha256") == cli::sha256_hex(meta(a.out, "config")));
    const std::string path = write_config("roundtrip_scan.json", meta(a.out, "config"));
    const Result c = run_cli({"scan", "--config", path});
    CHECK(c.code == 0);
    CHECK(c.out == a.out);
    const Result d = run_cli({"scan", "--axis", "w:0.14:0.2:7", "--seed", "43"});
    CHECK(d.out != a.out);
}

TEST_CASE("scan reproduces the one-two-many cluster sequence")
{
    const Result r = run_cli({"scan", "--axis", "w:0.14:0.2:13"});
    REQUIRE(r.code == 0);
    const Csv c = parse(r.out);
    CHECK(c.rows.size() == 13u * 4 * 10);
    CHECK(c.rows.front()[c.col("iterate_index")] == "991");
    CHECK(c.rows.back()[c.col("iterate_index")] == "1000");
    for (const auto& row : c.rows) {
        const double w = std::stod(row[c.col("param")]);
        const std::string regime = row[c.col("regime")];
        if (w < 0.1578)
            CHECK(regime == "fixed");
        else if (w < 0.164)
            CHECK(regime == "period-2");
        else
            CHECK(regime == "chaotic");
    }
}

TEST_CASE("config errors carry line numbers and exit 2")
{
    const std::string bad = write_config("bad_key.json", "{\n  \"system\": {\n    \"N\": 250,\n    \"bogus\": 1\n  }\n}\n");
    Result r = run_cli({"scan", "--config", bad});
    CHECK(r.code == 2);
    CHECK(r.err.find("line 4") != std::string::npos);

    const std::string syntax = write_config("bad_syntax.json", "{\n  \"red\": {\n    \"w\": 0.1,,\n  }\n}\n");
    r = run_cli({"scan", "--config", syntax});
    CHECK(r.code == 2);
    CHECK(r.err.find("line 3") != std::string::npos);

    const std::string type = write_config("bad_type.json", "{\n  \"red\": {\"w\": \"high\"}\n}\n");
    r = run_cli({"scan", "--config", type});
    CHECK(r.code == 2);
    CHECK(r.err.find("line 2") != std::string::npos);

    const std::string model = write_config("bad_model.json", "{\"system\": {\"model\": \"detailed\", \"K\": 1.2}}");
    CHECK(run_cli({"scan", "--config", model}).code == 2);

    const std::string range = write_config("bad_range.json", "{\"red\": {\"w\": 1.5}}");
    CHECK(run_cli({"scan", "--config", range}).code == 2);

    CHECK(run_cli({"scan", "--config", "does_not_exist.json"}).code == 2);
    CHECK(run_cli({"frobnicate"}).code == 2);
    CHECK(run_cli({"scan", "--axis", "w:0.1"}).code == 2);
    CHECK(run_cli({"scan", "--axis", "nope:0.1:0.2:3"}).code == 2);
    CHECK(run_cli({"scan", "--seed", "x"}).code == 2);
    CHECK(run_cli({"--help"}).code == 0);
}

TEST_CASE("numerical failures exit 3")
{
    const std::string cfg = write_config("no_pdb.json", "{\"pdb\": {\"along\": \"w\", \"bracket\": [0.01, 0.1]}}");
    const Result r = run_cli({"pdb", "--config", cfg});
    CHECK(r.code == 3);
}

TEST_CASE("dde command")
{
    const std::string cfg = write_config("dde_t10.json", "{\"kelly\": {\"T\": 10, \"horizon\": 600}}");
    const Result r = run_cli({"dde", "--config", cfg});
    REQUIRE(r.code == 0);
    CHECK(std::stod(meta(r.out, "min")) == Approx(0.7368).margin(1e-2));
    CHECK(std::stod(meta(r.out, "max")) == Approx(2.5).margin(1e-2));
    CHECK(meta(r.out, "sop_flag") == "1");
    CHECK(meta(r.out, "converged") == "0");
    const Csv c = parse(r.out);
    CHECK(c.header == std::vector<std::string>{"t", "user_index", "rate"});

    const std::string stable = write_config("dde_stable.json", "{\"kelly\": {\"a\": [7]}}");
    const Result s = run_cli({"dde", "--config", stable});
    REQUIRE(s.code == 0);
    CHECK(meta(s.out, "period").empty());
    CHECK(meta(s.out, "converged") == "1");

    const std::string zero = write_config("dde_t0.json", "{\"kelly\": {\"T\": 0}}");
    CHECK(run_cli({"dde", "--config", zero}).code == 2);
}

TEST_CASE("washout region matches the triangle")
{
    const std::string cfg = write_config(
        "region.json", "{\"washout\": {\"lambda0\": -1.5, \"b\": 1, \"d_min\": 0.01, \"d_max\": 1.99, \"d_points\": 23,"
                       " \"k_min\": -1, \"k_max\": 3, \"k_points\": 29}}");
    const Result r = run_cli({"washout-region", "--config", cfg});
    REQUIRE(r.code == 0);
    const Csv c = parse(r.out);
    CHECK(c.rows.size() == 23u * 29);
    const StabilityTriangle t = stability_triangle(-1.5, 1);
    for (const auto& row : c.rows) {
        const double d = std::stod(row[c.col("d")]), k = std::stod(row[c.col("k_l")]);
        CHECK(row[c.col("jury_verdict")] == (t.contains(d, k) ? "1" : "0"));
        CHECK((std::stod(row[c.col("spectral_radius")]) < 1) == t.contains(d, k));
    }
}

TEST_CASE("zero-gain washout simulation equals the open-loop orbit")
{
    const std::string cfg = write_config("sim0.json", "{\"red\": {\"w\": 0.17}, \"washout\": {\"q0\": 1000, \"steps\": 300}}");
    const Result r = run_cli({"washout-sim", "--config", cfg});
    REQUIRE(r.code == 0);
    const Csv c = parse(r.out);
    REQUIRE(c.rows.size() == 300);
    CHECK(c.col("p_max_actuated") == 5);
    const MapModel m = fixtures::p1(0.17);
    double q = 1000;
    char buf[40];
    for (const auto& row : c.rows) {
        std::snprintf(buf, sizeof buf, "%.17g", q);
        REQUIRE(row[c.col("q_avg_pkts")] == buf);
        q = map_step(q, m);
    }
}

TEST_CASE("controlled PDB exceeds the open-loop PDB")
{
    const std::string cfg = write_config(
        "pdb_ctrl.json",
        "{\"system\": {\"N\": 129, \"C\": 4e7, \"B\": 3735}, \"red\": {\"q_min\": 249, \"q_max\": 747, \"w\": 0.03125},"
        " \"pdb\": {\"along\": \"R0\", \"bracket\": [0.1, 0.5]}, \"washout\": {\"k_l\": -0.004016064257028112}}");
    const Result r = run_cli({"pdb", "--config", cfg});
    REQUIRE(r.code == 0);
    const Csv c = parse(r.out);
    REQUIRE(c.rows.size() == 1);
    CHECK(std::stod(c.rows[0][c.col("controlled")]) > std::stod(c.rows[0][c.col("critical")]));
}

TEST_CASE("every command runs on defaults")
{
    for (const char* cmd : {"pdb", "bcb", "chaos", "lyapunov", "dde", "delay-stability", "boxes", "washout-region",
                            "washout-sim", "fixed-point"}) {
        const Result r = run_cli({cmd});
        INFO(cmd << ": " << r.err);
        CHECK(r.code == 0);
        parse(r.out);
    }
}

TEST_CASE("--out writes the table to a file")
{
    const Result r = run_cli({"fixed-point", "--out", "fp.csv"});
    REQUIRE(r.code == 0);
    CHECK(r.out.empty());
    std::ifstream in("fp.csv");
    const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    const Csv c = parse(text);
    CHECK(std::stod(c.rows[0][c.col("q_star_pkts")]) == Approx(345.10316469162035).epsilon(1e-14));
}
