# Tests package for CustomLangGraphChatBot
