#pragma once

#include "koopman/types.hpp"

#include <string>
#include <vector>

namespace koopman {

// Doubles are printed with 17 significant digits so text round trips are exact.
std::string format_double(double v);

// Complex scalars as re+imj / re-imj, e.g. 1.25-0.5j.
std::string format_complex(const Complex& z);
Complex parse_complex(const std::string& s);

std::vector<std::string> split_csv_line(const std::string& line);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// Hash of a file's bytes in git blob form: sha1("blob <size>\0" + bytes).
std::string git_blob_sha1(const std::string& bytes);

// Complex matrix CSV (entries re+imj), used for the boundary matrix G.
void write_complex_csv(const CMat& M, const std::string& path);
CMat read_complex_csv(const std::string& path);

}  // namespace koopman
