#!/usr/bin/env python3
"""Regenerates include/turntake/prompt_assets.hpp from assets/prompts/<version>/."""
import pathlib
import sys

root = pathlib.Path(__file__).resolve().parent.parent
version = sys.argv[1] if len(sys.argv) > 1 else "v1"
base = root / "assets" / "prompts" / version
system = (base / "system.txt").read_text(encoding="utf-8")
instruction = (base / "instruction.txt").read_text(encoding="utf-8")
for name, body in (("system", system), ("instruction", instruction)):
    if ")PROMPT\"" in body:
        sys.exit(f"{name} contains the raw-string delimiter")

out = sys.stdout
out.write(f"// Generated by tools/gen_prompt_assets.py from assets/prompts/{version}/. Do not edit.\n")
out.write("#pragma once\n\n#include <string_view>\n\nnamespace turntake::prompting::assets {\n\n")
out.write(f'inline constexpr std::string_view kVersion = "{version}";\n\n')
out.write(f'inline constexpr std::string_view kSystemPrompt = R"PROMPT({system})PROMPT";\n\n')
out.write(f'inline constexpr std::string_view kInstructionTemplate = R"PROMPT({instruction})PROMPT";\n\n')
out.write("}  // namespace turntake::prompting::assets\n")
