// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0

#include "smra/cli.hpp"

int main(int argc, char** argv) { return smra::cli::run(argc, argv); }
