#include "laconv/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include <json.hpp>

namespace laconv {

Vocabulary::Vocabulary() {
    id_to_token_ = {"<pad>", "<unk>"};
    token_to_id_["<pad>"] = kPad;
    token_to_id_["<unk>"] = kUnk;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    std::sort(tokens.begin(), tokens.end());
    tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
    Vocabulary v;
    for (auto& t : tokens) {
        if (v.token_to_id_.count(t)) continue;
        const int id = static_cast<int>(v.id_to_token_.size());
        v.token_to_id_[t] = id;
        v.id_to_token_.push_back(t);
    }
    return v;
}

int Vocabulary::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw InputError("vocabulary id out of range");
    return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

std::string Vocabulary::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [tok, id] : token_to_id_) j[tok] = id;  // std::map keeps keys sorted
    return j.dump();
}

Vocabulary Vocabulary::from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    Vocabulary v;
    std::vector<std::pair<int, std::string>> by_id;
    for (auto it = j.begin(); it != j.end(); ++it) by_id.emplace_back(it.value().get<int>(), it.key());
    std::sort(by_id.begin(), by_id.end());
    v.id_to_token_.clear();
    v.token_to_id_.clear();
    for (const auto& [id, tok] : by_id) {
        if (id != static_cast<int>(v.id_to_token_.size()))
            throw ParseError("vocabulary ids are not dense");
        v.id_to_token_.push_back(tok);
        v.token_to_id_[tok] = id;
    }
    if (v.size() < 2 || v.id_to_token_[0] != "<pad>" || v.id_to_token_[1] != "<unk>")
        throw ParseError("vocabulary missing reserved <pad>/<unk> ids");
    return v;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab) {
    auto words = split_words(text);
    if (words.empty()) throw InputError("tokenize: empty expression");
    std::vector<int> ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(vocab.id(w));
    return ids;
}

}  // namespace laconv
