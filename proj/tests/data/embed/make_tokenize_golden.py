"""Reference tokenizer used to produce tokenize_golden.jsonl."""
import json
import re
import sys

TOKEN = re.compile(r"[a-z0-9']+|[^\sa-z0-9']")

with open(sys.argv[1], encoding="ascii") as src:
    for line in src:
        text = line.rstrip("\n")
        print(json.dumps({"text": text, "tokens": TOKEN.findall(text.lower())}))
