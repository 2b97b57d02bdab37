#pragma once

#include <map>
#include <string>
#include <vector>

#include "laconv/common.hpp"

namespace laconv {

// Token table with reserved ids: 0 = <pad>, 1 = <unk>. Ids are dense.
class Vocabulary {
  public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    Vocabulary();
    // words get ids 2.. in sorted order so the table is reproducible
    static Vocabulary from_tokens(std::vector<std::string> tokens);

    int id(const std::string& token) const;        // kUnk when missing
    const std::string& token(int id) const;        // throws on bad id
    bool contains(const std::string& token) const;
    int size() const { return static_cast<int>(id_to_token_.size()); }

    std::string to_json() const;                   // sorted {token: id}
    static Vocabulary from_json(const std::string& json_text);

  private:
    std::map<std::string, int> token_to_id_;
    std::vector<std::string> id_to_token_;
};

// lowercase + whitespace split; OOV maps to <unk>
std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab);
std::vector<std::string> split_words(const std::string& text);

}  // namespace laconv
