// Scripted scorer for the subprocess client tests. Speaks the line protocol
// on stdio; argv[1] picks the behaviour:
//   ok          score_i = -(1 + i)/10, replies in order
//   reverse:N   buffers N requests, replies to them last-first
//   nan         replies with a NaN score
//   count       replies with one score too many
//   hang        reads requests, never replies
//   die         exits after the first request
//   flaky:PATH  dies on the first request if PATH does not exist (and creates
//               it), otherwise behaves like ok
//   log:PATH    like ok, appending every request line to PATH
//   quota:PATH  like ok while PATH (a request budget) is positive; each
//               request decrements it, and at zero the process exits

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

namespace {

std::string reply_for(const std::string& line, const std::string& mode) {
    auto req = nlohmann::json::parse(line);
    nlohmann::ordered_json reply;
    reply["v"] = 1;
    reply["qid"] = req["qid"];
    auto scores = nlohmann::json::array();
    const auto n = req["passages"].size();
    for (std::size_t i = 0; i < n; ++i) {
        scores.push_back(-static_cast<double>(1 + i) / 10.0);
    }
    if (mode == "count") {
        scores.push_back(-1.0);
    }
    reply["scores"] = scores;
    auto text = reply.dump();
    if (mode == "nan") {
        auto pos = text.find("-0.1");
        text.replace(pos, 4, "NaN");
    }
    return text;
}

} // namespace

int main(int argc, char** argv) {
    std::string mode = argc > 1 ? argv[1] : "ok";
    std::string arg;
    if (auto colon = mode.find(':'); colon != std::string::npos) {
        arg = mode.substr(colon + 1);
        mode = mode.substr(0, colon);
    }
    std::vector<std::string> held;
    std::string line;
    while (std::getline(std::cin, line)) {
        if (mode == "hang") {
            continue;
        }
        if (mode == "die") {
            return 1;
        }
        if (mode == "flaky") {
            if (!std::ifstream(arg)) {
                std::ofstream(arg) << "x";
                return 1;
            }
        }
        if (mode == "quota") {
            long left = 0;
            std::ifstream(arg) >> left;
            if (left <= 0) {
                return 1;
            }
            std::ofstream(arg) << left - 1;
        }
        if (mode == "log") {
            std::ofstream(arg, std::ios::app) << line << '\n';
        }
        if (mode == "reverse") {
            held.push_back(line);
            if (held.size() < static_cast<std::size_t>(std::atoi(arg.c_str()))) {
                continue;
            }
            for (auto it = held.rbegin(); it != held.rend(); ++it) {
                std::cout << reply_for(*it, "ok") << '\n';
            }
            std::cout.flush();
            held.clear();
            continue;
        }
        std::cout << reply_for(line, mode) << std::endl;
    }
    return 0;
}
