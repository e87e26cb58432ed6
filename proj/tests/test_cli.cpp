#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fwdppl/cli.hpp"

#include "fixtures.hpp"

using namespace fwdppl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("fwdppl_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }

    std::string write(const std::string& name, const std::string& content) const {
        auto p = path / name;
        std::ofstream f(p, std::ios::binary);
        f << content;
        return p.string();
    }
    std::string read(const std::string& name) const {
        std::ifstream f(path / name, std::ios::binary);
        REQUIRE(f.good());
        std::ostringstream buf;
        buf << f.rdbuf();
        return buf.str();
    }
    bool exists(const std::string& name) const { return fs::exists(path / name); }
};

struct CliResult {
    int code;
    std::string out, err;
};

CliResult cli(const std::vector<std::string>& args, const std::string& stdin_text = "") {
    std::istringstream in(stdin_text);
    std::ostringstream out, err;
    CliResult r;
    r.code = run_cli(args, in, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

int count_lines_starting_with(const std::string& text, const std::string& prefix) {
    std::istringstream in(text);
    std::string line;
    int n = 0;
    while (std::getline(in, line))
        if (line.rfind(prefix, 0) == 0) ++n;
    return n;
}

}  // namespace

// ---------------------------------------------------------------------------
// Argument handling.

TEST_CASE("usage errors exit 1") {
    CHECK(cli({}).code == 1);
    CHECK(cli({"frobnicate", "x.ppl"}).code == 1);
    CHECK(cli({"graph"}).code == 1);
    CHECK(cli({"graph", "x.ppl", "--mode", "sideways"}).code == 1);
    CHECK(cli({"graph", "x.ppl", "--emit", "nonsense"}).code == 1);

    TempDir dir;
    auto model = dir.write("m.ppl", fixtures::two_solutions);
    CHECK(cli({"sample", model}).code == 1);  // missing --seed
    CHECK(cli({"check", model}).code == 1);
    auto r = cli({"sample", model});
    CHECK(r.err.find("--seed is required") != std::string::npos);

    CHECK(cli({"transform", model, "--assume-all-yes", "--fail-on-ambiguous"}).code == 1);
}

// ---------------------------------------------------------------------------
// graph

TEST_CASE("graph emits the full factor-graph document") {
    TempDir dir;
    auto model = dir.write("m.ppl", fixtures::eight_schools);
    auto r = cli({"graph", model});
    CHECK(r.code == 0);
    CHECK(r.out.rfind("factorgraph v1", 0) == 0);
    CHECK(count_lines_starting_with(r.out, "factor ") == 4);

    auto prior = cli({"graph", model, "--mode", "prior"});
    CHECK(prior.code == 0);
    CHECK(count_lines_starting_with(prior.out, "factor ") == 3);
    CHECK(prior.out.find("F15") == std::string::npos);
}

TEST_CASE("graph writes artifacts under --out") {
    TempDir dir;
    auto model = dir.write("m.ppl", fixtures::eight_schools);
    TempDir out;
    auto r = cli({"graph", model, "--out", out.path.string(), "--emit", "fg", "--emit",
                  "dep-graph"});
    CHECK(r.code == 0);
    CHECK(out.read("factor_graph.txt") == r.out);
    CHECK(out.read("factor_graph.dot").rfind("graph factorgraph {", 0) == 0);
    CHECK(out.exists("dep_graph.dot"));
}

TEST_CASE("graph reports parse errors with a location and exit 2") {
    TempDir dir;
    auto model = dir.write("bad.ppl", "model {\n  target += ;\n}\n");
    auto r = cli({"graph", model});
    CHECK(r.code == 2);
    CHECK(r.err.find("2:") != std::string::npos);
}

TEST_CASE("graph warns when a model has no factors") {
    TempDir dir;
    auto model = dir.write("m.ppl", "parameters {\n  real x;\n}\nmodel {\n}\n");
    auto r = cli({"graph", model});
    CHECK(r.code == 0);
    CHECK(count_lines_starting_with(r.out, "factor ") == 0);
    CHECK(r.err.find("no density factors") != std::string::npos);
}

// ---------------------------------------------------------------------------
// transform

TEST_CASE("transform derives the eight-schools prior DAG without prompting") {
    TempDir dir;
    auto model = dir.write("m.ppl", fixtures::eight_schools);
    auto r = cli({"transform", model});
    CHECK(r.code == 0);
    CHECK(r.out.find("Variable") == std::string::npos);  // zero queries
    CHECK(r.out.find("mu -> theta;") != std::string::npos);
    CHECK(r.out.find("assign mu = F12") != std::string::npos);
    CHECK(r.out.find("assign tau = F13") != std::string::npos);
    CHECK(r.out.find("assign theta = F14") != std::string::npos);
}

TEST_CASE("the interactive query protocol resolves the ambiguous fixture") {
    TempDir dir;
    auto model = dir.write("m.ppl", fixtures::query_model);
    auto r = cli({"transform", model}, "1\n");
    CHECK(r.code == 0);
    const std::string prompt =
        "Variable c has ambiguous conditional density. Which factor set is\n"
        "its constant-normalized density?\n"
        "  0: none of the below\n"
        "  1: { target += -(c - 3)^2; }\n"
        "  2: { target += -(c - 3)^2;, "
        "target += -(d * square(e - c)) / (2 * square(c) * e); }\n"
        "> ";
    CHECK(r.out.rfind(prompt, 0) == 0);
    CHECK(r.out.find("assign e = F15,F16") != std::string::npos);
    CHECK(r.out.find("assign c = F13\n") != std::string::npos);
}

TEST_CASE("selecting the alternative answer yields the other DAG") {
    TempDir dir;
    auto model = dir.write("m.ppl", fixtures::query_model);
    auto r = cli({"transform", model}, "2\n");
    CHECK(r.code == 0);
    CHECK(r.out.find("assign c = F13,F16") != std::string::npos);
    CHECK(r.out.find("assign e = F15\n") != std::string::npos);
}

TEST_CASE("answering none yields exit 3 and no DAG") {
    TempDir dir;
    auto model = dir.write("m.ppl", fixtures::query_model);
    auto r = cli({"transform", model}, "0\n");
    CHECK(r.code == 3);
    CHECK(r.err.find("no DAG can be derived from the model with the given "
                     "constant-normalized densities") != std::string::npos);
    CHECK(r.out.find("assign") == std::string::npos);
}

TEST_CASE("malformed interactive answers are usage errors") {
    TempDir dir;
    auto model = dir.write("m.ppl", fixtures::query_model);
    CHECK(cli({"transform", model}, "7\n").code == 1);
    CHECK(cli({"transform", model}, "maybe\n").code == 1);
    CHECK(cli({"transform", model}, "").code == 1);  // EOF before an answer
}

TEST_CASE("--fail-on-ambiguous refuses models that need queries") {
    TempDir dir;
    auto model = dir.write("m.ppl", fixtures::query_model);
    auto r = cli({"transform", model, "--fail-on-ambiguous"});
    CHECK(r.code == 3);

    auto ok = cli({"transform", dir.write("e.ppl", fixtures::eight_schools),
                   "--fail-on-ambiguous"});
    CHECK(ok.code == 0);
}

TEST_CASE("--assume-all-yes takes the canonical selection with a warning") {
    TempDir dir;
    auto model = dir.write("m.ppl", fixtures::query_model);
    auto r = cli({"transform", model, "--assume-all-yes"});
    CHECK(r.code == 0);
    CHECK(r.err.find("warning: assuming") != std::string::npos);
    // lexicographically smallest selection assigns F16 to c
    CHECK(r.out.find("assign c = F13,F16") != std::string::npos);
}

TEST_CASE("scripted answers drive the protocol from a file") {
    TempDir dir;
    auto model = dir.write("m.ppl", fixtures::query_model);
    auto answers = dir.write("answers.txt", "# pick the singleton for c\nc=1\n");
    auto r = cli({"transform", model, "--answers", answers});
    CHECK(r.code == 0);
    CHECK(r.out.find("Variable") == std::string::npos);  // no prompt in scripted mode
    CHECK(r.out.find("assign e = F15,F16") != std::string::npos);

    auto missing = dir.write("empty.txt", "# nothing here\n");
    auto bad = cli({"transform", model, "--answers", missing});
    CHECK(bad.code == 1);
    CHECK(bad.err.find("missing an answer for variable c") != std::string::npos);
}

TEST_CASE("a fully coupled model has no forward-sampling form") {
    TempDir dir;
    auto model = dir.write("m.ppl", fixtures::triangle);
    auto r = cli({"transform", model});
    CHECK(r.code == 3);
    CHECK(r.err.find("forward sampling is not possible") != std::string::npos);
}

TEST_CASE("transform --emit writes the requested artifacts") {
    TempDir dir;
    auto model = dir.write("m.ppl", fixtures::two_solutions);
    TempDir out;
    auto r = cli({"transform", model, "--assume-all-yes", "--out", out.path.string(),
                  "--emit", "cnf", "--emit", "selections", "--emit", "fg"});
    CHECK(r.code == 0);
    CHECK(out.read("constraints.dimacs").find("p cnf ") != std::string::npos);
    CHECK(count_lines_starting_with(out.read("selections.txt"), "{") == 2);
    CHECK(out.read("factor_graph.txt").rfind("factorgraph v1", 0) == 0);
    CHECK(out.exists("dag.dot"));
    CHECK(out.exists("assignment.txt"));
}

// ---------------------------------------------------------------------------
// ppc / sbc

TEST_CASE("ppc writes a single program for the eight-schools model") {
    TempDir dir;
    auto model = dir.write("m.ppl", fixtures::eight_schools);
    TempDir out;
    auto r = cli({"ppc", model, "--out", out.path.string()});
    CHECK(r.code == 0);
    CHECK(out.exists("ppc.ppl"));
    CHECK_FALSE(out.exists("ppc_1.ppl"));
    auto text = out.read("ppc.ppl");
    CHECK(text.find("generated quantities {") != std::string::npos);
    CHECK(text.find("y_sim = normal_rng(theta, sigma);") != std::string::npos);
}

TEST_CASE("ppc fails with exit 3 when the transform is impossible") {
    TempDir dir;
    auto model = dir.write("m.ppl", fixtures::triangle);
    TempDir out;
    auto r = cli({"ppc", model, "--out", out.path.string()});
    CHECK(r.code == 3);
    CHECK(fs::is_empty(out.path));
}

TEST_CASE("sbc writes the program chain and manifest") {
    TempDir dir;
    auto model = dir.write("m.ppl", fixtures::eight_schools);
    TempDir out;
    auto r = cli({"sbc", model, "--out", out.path.string()});
    CHECK(r.code == 0);
    CHECK(out.exists("sbc_manifest.txt"));
    auto manifest = out.read("sbc_manifest.txt");
    CHECK(manifest == r.out);
    CHECK(count_lines_starting_with(manifest, "program ") == 2);
    CHECK(manifest.find("ranks") != std::string::npos);
    std::istringstream in(manifest);
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("program ", 0) != 0) continue;
        auto name = line.substr(line.rfind(' ') + 1);
        CHECK(out.exists(name));
    }
}

// ---------------------------------------------------------------------------
// sample / check

TEST_CASE("sample produces deterministic CSV draws") {
    TempDir dir;
    auto model = dir.write("m.ppl", fixtures::two_solutions);
    TempDir out;
    std::vector<std::string> args = {"sample",  model, "--seed",        "11",
                                     "--draws", "5",   "--warmup",      "30",
                                     "--inner-iters", "30", "--assume-all-yes",
                                     "--out", out.path.string()};
    auto r1 = cli(args);
    auto r2 = cli(args);
    CHECK(r1.code == 0);
    CHECK(r1.out == r2.out);
    CHECK(out.read("draws.csv") == r1.out);
    CHECK(r1.out.rfind("y,x\n", 0) == 0);  // canonical selection roots y
    CHECK(count_lines_starting_with(r1.out, "") == 6);  // header + 5 rows

    auto r3 = cli({"sample", model, "--seed", "12", "--draws", "5", "--warmup", "30",
                   "--inner-iters", "30", "--assume-all-yes"});
    CHECK(r3.out != r1.out);
}

TEST_CASE("sample reads the data environment from CSV") {
    TempDir dir;
    auto model = dir.write("m.ppl", fixtures::eight_schools);
    auto data = dir.write("data.csv", "J,sigma[1],sigma[2],sigma[3]\n3,1,1.5,2\n");
    auto r = cli({"sample", model, "--seed", "4", "--draws", "3", "--warmup", "20",
                  "--inner-iters", "20", "--data", data});
    CHECK(r.code == 0);
    CHECK(r.out.rfind("mu,tau,theta[1],theta[2],theta[3]\n", 0) == 0);

    auto full = cli({"sample", model, "--mode", "full", "--seed", "4", "--draws", "2",
                     "--warmup", "20", "--inner-iters", "20", "--data", data});
    CHECK(full.code == 0);
    CHECK(full.out.find("y_sim[1]") != std::string::npos);
}

TEST_CASE("check runs the equivalence oracle end to end") {
    TempDir dir;
    auto model = dir.write("m.ppl", fixtures::eight_schools);
    auto data = dir.write("data.csv", "J,sigma[1],sigma[2],sigma[3]\n3,1,1.5,2\n");
    TempDir out;
    auto r = cli({"check", model, "--seed", "21", "--draws", "2500", "--step-size", "1.0",
                  "--warmup", "150", "--inner-iters", "150", "--data", data, "--out",
                  out.path.string()});
    CHECK(r.code == 0);
    CHECK(r.out.find("PASS overall") != std::string::npos);
    CHECK(r.out.find("timing forward=") != std::string::npos);
    // the artifact is the report minus the (non-deterministic) timing line
    auto artifact = out.read("equivalence_report.txt");
    CHECK(r.out.rfind(artifact, 0) == 0);
    CHECK(artifact.find("timing") == std::string::npos);
}
